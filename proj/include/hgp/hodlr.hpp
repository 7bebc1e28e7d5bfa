#pragma once

#include <atomic>
#include <iosfwd>
#include <memory>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "hgp/kernels.hpp"
#include "hgp/lowrank.hpp"

namespace hgp {

/// Number of recursive halvings so every diagonal leaf is at most
/// leaf_size x leaf_size (leaf_size is a maximum block size).
int hodlr_levels(int n, int leaf_size);

/// Left-child size of a block split; the right child absorbs the remainder.
inline int split_left(int m) { return m / 2; }

/// Hierarchical off-diagonal low-rank matrix: recursive 2x2 partition with
/// dense symmetric diagonal leaves (kept exact) and tolerance-compressed
/// off-diagonal factors.
class HodlrMatrix {
 public:
  struct Node {
    int start = 0, size = 0, depth = 0;
    Eigen::MatrixXd dense;  // leaf only
    std::unique_ptr<Node> child0, child1;
    LowRankFactor off;  // block (child0, child1); the mirror block is its transpose

    bool is_leaf() const { return !child0; }
  };

  HodlrMatrix() = default;

  /// Kernel-matrix assembly over sorted points. Diagonal gets the nugget and,
  /// when noise_precisions is given, +1/precision_i.
  static HodlrMatrix assemble(const Eigen::MatrixXd& points, const KernelParams& p,
                              double eps, int leaf_size,
                              const Eigen::VectorXd* noise_precisions = nullptr,
                              const LowRankOptions& lr = {});

  /// Generic assembly from an entry accessor (i,j) -> double, plus an optional
  /// per-index diagonal addition.
  template <class Accessor>
  static HodlrMatrix assemble_from(Accessor&& acc, int n, double eps, int leaf_size,
                                   const Eigen::VectorXd* diag_add = nullptr,
                                   const LowRankOptions& lr = {});

  int size() const { return n_; }
  int levels() const { return levels_; }
  int leaf_size() const { return leaf_size_; }
  double eps() const { return eps_; }
  bool empty() const { return !root_; }
  const Node* root() const { return root_.get(); }

  Eigen::VectorXd matvec(const Eigen::Ref<const Eigen::VectorXd>& v) const;

  /// alpha * H + shift * I, reusing this tree's topology and factors.
  HodlrMatrix scaled(double alpha, double diag_shift) const;
  /// alpha * H + diag(d).
  HodlrMatrix scaled_with_diagonal(double alpha, const Eigen::VectorXd& d) const;

  Eigen::MatrixXd to_dense(int dense_limit = 8192) const;

  struct BlockInfo {
    int depth, row_start, col_start, rows, cols, rank;
  };
  std::vector<BlockInfo> offdiagonal_blocks() const;
  std::vector<const Eigen::MatrixXd*> leaf_blocks() const;
  std::size_t storage_doubles() const;

  /// Debug dump: versioned header, level count, per-block dims/ranks,
  /// row-major little-endian 64-bit floats.
  void dump(std::ostream& os) const;
  static HodlrMatrix load(std::istream& is);

 private:
  std::unique_ptr<Node> root_;
  int n_ = 0, levels_ = 0, leaf_size_ = 0;
  double eps_ = 0.0;

  friend struct FactorCoreBuilder;
};

enum class LeafFactorKind { cholesky, symmetric_root };

namespace detail {

struct LeafFactor {
  int start = 0, size = 0, depth = 0;
  LeafFactorKind kind = LeafFactorKind::cholesky;
  Eigen::LLT<Eigen::MatrixXd> llt;  // cholesky mode
  Eigen::MatrixXd evec;             // symmetric-root mode
  Eigen::VectorXd sqrt_eval;
  double logdet = 0.0;  // log det of the factor itself (half the block's)

  void apply(Eigen::Ref<Eigen::VectorXd> v) const;            // v <- W v
  void apply_inverse(Eigen::Ref<Eigen::VectorXd> v) const;    // v <- W^-1 v
  void apply_inverse_transpose(Eigen::Ref<Eigen::VectorXd> v) const;
  void apply_inverse_cols(Eigen::Ref<Eigen::MatrixXd> b) const;
};

// One low-rank update to the identity: X = I + [Q0;Q1] G [Q0;Q1]^T, the PSD
// square root of the scaled middle matrix at one internal node.
struct LevelUpdate {
  int start = 0, m0 = 0, m1 = 0, depth = 0;
  Eigen::MatrixXd Q0, Q1;   // m0 x r, m1 x r, orthonormal columns
  Eigen::MatrixXd G, Ginv;  // 2r x 2r
  double logdet = 0.0;      // log det X

  void apply(Eigen::Ref<Eigen::VectorXd> v) const;
  void apply_inverse(Eigen::Ref<Eigen::VectorXd> v) const;
  /// Inverse applied to a local slice whose row 0 corresponds to `start`.
  void apply_inverse_local(Eigen::Ref<Eigen::MatrixXd> b) const;
};

// W = A_leaf * X_{l-1} * ... * X_0 with W W^T = H. Updates are stored
// ordered by depth descending (deepest first).
struct FactorCore {
  int n = 0;
  std::vector<LeafFactor> leaves;
  std::vector<LevelUpdate> updates;
  double logdet_W = 0.0;

  Eigen::VectorXd apply_W(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  Eigen::VectorXd solve(const Eigen::Ref<const Eigen::VectorXd>& b) const;  // (W W^T)^-1 b
  double logdet() const { return 2.0 * logdet_W; }
};

FactorCore build_factor_core(const HodlrMatrix& H, LeafFactorKind kind);

}  // namespace detail

/// Factorization of an SPD HodlrMatrix enabling O(n log n) solves and
/// log-determinant evaluation.
class HodlrFactorization {
 public:
  HodlrFactorization() = default;
  Eigen::VectorXd solve(const Eigen::Ref<const Eigen::VectorXd>& b) const;
  double logdet() const;
  int size() const { return core_.n; }

 private:
  detail::FactorCore core_;
  friend HodlrFactorization factorize(const HodlrMatrix&);
};

/// Implicit W with W W^T = H: one block-diagonal dense factor followed by
/// one low-rank update to the identity per level, applied right-to-left.
class SymmetricFactor {
 public:
  SymmetricFactor() = default;
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  int size() const { return core_.n; }

 private:
  detail::FactorCore core_;
  friend SymmetricFactor symmetric_factorize(const HodlrMatrix&);
};

HodlrFactorization factorize(const HodlrMatrix& H);
SymmetricFactor symmetric_factorize(const HodlrMatrix& H);

/// Factorization call counters, for verifying precomputation contracts.
namespace hodlr_stats {
extern std::atomic<long> factorize_count;
extern std::atomic<long> symmetric_factorize_count;
void reset();
}  // namespace hodlr_stats

// ---- template implementation ----

namespace detail {

template <class Accessor>
std::unique_ptr<HodlrMatrix::Node> build_node(Accessor& acc, int start, int size, int depth,
                                              int levels, double eps,
                                              const Eigen::VectorXd* diag_add,
                                              const LowRankOptions& lr) {
  auto node = std::make_unique<HodlrMatrix::Node>();
  node->start = start;
  node->size = size;
  node->depth = depth;
  if (depth == levels) {
    node->dense.resize(size, size);
    for (int i = 0; i < size; ++i) {
      for (int j = 0; j <= i; ++j) {
        const double v = acc(start + i, start + j);
        node->dense(i, j) = v;
        node->dense(j, i) = v;
      }
      if (diag_add) node->dense(i, i) += (*diag_add)[start + i];
    }
    if (!node->dense.allFinite()) {
      throw InvalidArgument("hodlr assemble: non-finite kernel value in leaf at row " +
                            std::to_string(start));
    }
    return node;
  }
  const int m0 = split_left(size);
  const int m1 = size - m0;
  node->child0 = build_node(acc, start, m0, depth + 1, levels, eps, diag_add, lr);
  node->child1 = build_node(acc, start + m0, m1, depth + 1, levels, eps, diag_add, lr);
  node->off = factor_block(
      [&acc, start, m0](int i, int j) { return acc(start + i, start + m0 + j); }, m0, m1,
      eps, lr);
  if (!node->off.U.allFinite() || !node->off.V.allFinite()) {
    throw InvalidArgument("hodlr assemble: non-finite kernel value in off-diagonal block");
  }
  return node;
}

}  // namespace detail

template <class Accessor>
HodlrMatrix HodlrMatrix::assemble_from(Accessor&& acc, int n, double eps, int leaf_size,
                                       const Eigen::VectorXd* diag_add,
                                       const LowRankOptions& lr) {
  if (n <= 0) throw InvalidArgument("hodlr assemble: empty matrix");
  if (!(eps > 0.0)) throw InvalidArgument("hodlr assemble: eps must be positive");
  if (leaf_size < 8) throw InvalidArgument("hodlr assemble: leaf_size must be >= 8");
  if (diag_add && diag_add->size() != n) {
    throw InvalidArgument("hodlr assemble: diagonal addition length mismatch");
  }
  HodlrMatrix H;
  H.n_ = n;
  H.leaf_size_ = leaf_size;
  H.eps_ = eps;
  H.levels_ = hodlr_levels(n, leaf_size);
  H.root_ = detail::build_node(acc, 0, n, 0, H.levels_, eps, diag_add, lr);
  return H;
}

}  // namespace hgp
