#include "hgp/hodlr.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <unordered_map>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace hgp {

namespace hodlr_stats {
std::atomic<long> factorize_count{0};
std::atomic<long> symmetric_factorize_count{0};
void reset() {
  factorize_count = 0;
  symmetric_factorize_count = 0;
}
}  // namespace hodlr_stats

int hodlr_levels(int n, int leaf_size) {
  int levels = 0;
  int m = n;
  while (m > leaf_size) {
    m = (m + 1) / 2;  // worst-case (largest) child size after one split
    ++levels;
  }
  return levels;
}

HodlrMatrix HodlrMatrix::assemble(const Eigen::MatrixXd& points, const KernelParams& p,
                                  double eps, int leaf_size,
                                  const Eigen::VectorXd* noise_precisions,
                                  const LowRankOptions& lr) {
  p.validate();
  const int n = static_cast<int>(points.rows());
  Eigen::VectorXd diag = Eigen::VectorXd::Constant(n, p.nugget);
  if (noise_precisions) {
    if (noise_precisions->size() != n) {
      throw InvalidArgument("hodlr assemble: noise precision length mismatch");
    }
    diag += noise_precisions->cwiseInverse();
  }
  auto acc = [&points, &p](int i, int j) {
    return p.sigma_f_sq * std::exp(-p.rho * (points.row(i) - points.row(j)).squaredNorm());
  };
  return assemble_from(acc, n, eps, leaf_size, &diag, lr);
}

namespace {

void matvec_rec(const HodlrMatrix::Node* node, const Eigen::Ref<const Eigen::VectorXd>& v,
                Eigen::Ref<Eigen::VectorXd> out) {
  if (node->is_leaf()) {
    out.noalias() = node->dense * v;
    return;
  }
  const int m0 = node->child0->size;
  const int m1 = node->child1->size;
  matvec_rec(node->child0.get(), v.head(m0), out.head(m0));
  matvec_rec(node->child1.get(), v.tail(m1), out.tail(m1));
  if (node->off.rank() > 0) {
    out.head(m0).noalias() += node->off.U * (node->off.V.transpose() * v.tail(m1));
    out.tail(m1).noalias() += node->off.V * (node->off.U.transpose() * v.head(m0));
  }
}

std::unique_ptr<HodlrMatrix::Node> scale_rec(const HodlrMatrix::Node* node, double alpha,
                                             const Eigen::VectorXd* d, double shift) {
  auto out = std::make_unique<HodlrMatrix::Node>();
  out->start = node->start;
  out->size = node->size;
  out->depth = node->depth;
  if (node->is_leaf()) {
    out->dense = alpha * node->dense;
    if (d) {
      out->dense.diagonal() += d->segment(node->start, node->size);
    } else {
      out->dense.diagonal().array() += shift;
    }
    return out;
  }
  out->child0 = scale_rec(node->child0.get(), alpha, d, shift);
  out->child1 = scale_rec(node->child1.get(), alpha, d, shift);
  out->off = node->off;
  out->off.U *= alpha;
  out->off.achieved_tol *= std::abs(alpha);
  return out;
}

void to_dense_rec(const HodlrMatrix::Node* node, Eigen::Ref<Eigen::MatrixXd> out) {
  if (node->is_leaf()) {
    out = node->dense;
    return;
  }
  const int m0 = node->child0->size;
  const int m1 = node->child1->size;
  to_dense_rec(node->child0.get(), out.topLeftCorner(m0, m0));
  to_dense_rec(node->child1.get(), out.bottomRightCorner(m1, m1));
  if (node->off.rank() > 0) {
    out.topRightCorner(m0, m1).noalias() = node->off.U * node->off.V.transpose();
  } else {
    out.topRightCorner(m0, m1).setZero();
  }
  out.bottomLeftCorner(m1, m0) = out.topRightCorner(m0, m1).transpose();
}

}  // namespace

Eigen::VectorXd HodlrMatrix::matvec(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  if (empty()) throw InvalidArgument("hodlr matvec: empty matrix");
  if (v.size() != n_) throw InvalidArgument("hodlr matvec: length mismatch");
  Eigen::VectorXd out(n_);
  matvec_rec(root_.get(), v, out);
  return out;
}

HodlrMatrix HodlrMatrix::scaled(double alpha, double diag_shift) const {
  if (empty()) throw InvalidArgument("hodlr scaled: empty matrix");
  HodlrMatrix out;
  out.n_ = n_;
  out.levels_ = levels_;
  out.leaf_size_ = leaf_size_;
  out.eps_ = std::abs(alpha) * eps_;
  out.root_ = scale_rec(root_.get(), alpha, nullptr, diag_shift);
  return out;
}

HodlrMatrix HodlrMatrix::scaled_with_diagonal(double alpha, const Eigen::VectorXd& d) const {
  if (empty()) throw InvalidArgument("hodlr scaled_with_diagonal: empty matrix");
  if (d.size() != n_) throw InvalidArgument("hodlr scaled_with_diagonal: length mismatch");
  HodlrMatrix out;
  out.n_ = n_;
  out.levels_ = levels_;
  out.leaf_size_ = leaf_size_;
  out.eps_ = std::abs(alpha) * eps_;
  out.root_ = scale_rec(root_.get(), alpha, &d, 0.0);
  return out;
}

Eigen::MatrixXd HodlrMatrix::to_dense(int dense_limit) const {
  if (empty()) throw InvalidArgument("hodlr to_dense: empty matrix");
  if (n_ > dense_limit) {
    throw InvalidArgument("hodlr to_dense: n exceeds the dense limit");
  }
  Eigen::MatrixXd out(n_, n_);
  to_dense_rec(root_.get(), out);
  return out;
}

std::vector<HodlrMatrix::BlockInfo> HodlrMatrix::offdiagonal_blocks() const {
  std::vector<BlockInfo> blocks;
  std::function<void(const Node*)> walk = [&](const Node* node) {
    if (node->is_leaf()) return;
    blocks.push_back({node->depth, node->child0->start, node->child1->start,
                      node->child0->size, node->child1->size, node->off.rank()});
    walk(node->child0.get());
    walk(node->child1.get());
  };
  if (root_) walk(root_.get());
  return blocks;
}

std::vector<const Eigen::MatrixXd*> HodlrMatrix::leaf_blocks() const {
  std::vector<const Eigen::MatrixXd*> leaves;
  std::function<void(const Node*)> walk = [&](const Node* node) {
    if (node->is_leaf()) {
      leaves.push_back(&node->dense);
      return;
    }
    walk(node->child0.get());
    walk(node->child1.get());
  };
  if (root_) walk(root_.get());
  return leaves;
}

std::size_t HodlrMatrix::storage_doubles() const {
  std::size_t total = 0;
  std::function<void(const Node*)> walk = [&](const Node* node) {
    if (node->is_leaf()) {
      total += static_cast<std::size_t>(node->dense.size());
      return;
    }
    total += static_cast<std::size_t>(node->off.U.size() + node->off.V.size());
    walk(node->child0.get());
    walk(node->child1.get());
  };
  if (root_) walk(root_.get());
  return total;
}

// ---- binary dump / load ----

namespace {

constexpr char kMagic[4] = {'H', 'G', 'P', 'H'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("hodlr load: truncated stream");
  return v;
}
void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  put<std::int64_t>(os, m.rows());
  put<std::int64_t>(os, m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(os, m(i, j));
}
Eigen::MatrixXd get_matrix(std::istream& is) {
  const auto rows = get<std::int64_t>(is);
  const auto cols = get<std::int64_t>(is);
  if (rows < 0 || cols < 0) throw IoError("hodlr load: bad matrix dims");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = get<double>(is);
  return m;
}

void dump_node(std::ostream& os, const HodlrMatrix::Node* node) {
  put<std::uint8_t>(os, node->is_leaf() ? 0 : 1);
  put<std::int64_t>(os, node->start);
  put<std::int64_t>(os, node->size);
  if (node->is_leaf()) {
    put_matrix(os, node->dense);
    return;
  }
  put<std::int64_t>(os, node->off.rank());
  put_matrix(os, node->off.U);
  put_matrix(os, node->off.V);
  dump_node(os, node->child0.get());
  dump_node(os, node->child1.get());
}

std::unique_ptr<HodlrMatrix::Node> load_node(std::istream& is, int depth) {
  auto node = std::make_unique<HodlrMatrix::Node>();
  const auto tag = get<std::uint8_t>(is);
  node->start = static_cast<int>(get<std::int64_t>(is));
  node->size = static_cast<int>(get<std::int64_t>(is));
  node->depth = depth;
  if (tag == 0) {
    node->dense = get_matrix(is);
    return node;
  }
  const auto rank = get<std::int64_t>(is);
  node->off.U = get_matrix(is);
  node->off.V = get_matrix(is);
  if (node->off.rank() != rank) throw IoError("hodlr load: rank mismatch");
  node->child0 = load_node(is, depth + 1);
  node->child1 = load_node(is, depth + 1);
  return node;
}

}  // namespace

void HodlrMatrix::dump(std::ostream& os) const {
  if (empty()) throw InvalidArgument("hodlr dump: empty matrix");
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::int64_t>(os, n_);
  put<std::int32_t>(os, levels_);
  put<std::int32_t>(os, leaf_size_);
  put<double>(os, eps_);
  dump_node(os, root_.get());
}

HodlrMatrix HodlrMatrix::load(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("hodlr load: bad magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw IoError("hodlr load: unsupported version");
  HodlrMatrix H;
  H.n_ = static_cast<int>(get<std::int64_t>(is));
  H.levels_ = get<std::int32_t>(is);
  H.leaf_size_ = get<std::int32_t>(is);
  H.eps_ = get<double>(is);
  H.root_ = load_node(is, 0);
  return H;
}

// ---- factorization core ----

namespace detail {

void LeafFactor::apply(Eigen::Ref<Eigen::VectorXd> v) const {
  if (kind == LeafFactorKind::cholesky) {
    v = llt.matrixL() * v;
  } else {
    v = evec * (sqrt_eval.asDiagonal() * (evec.transpose() * v));
  }
}

void LeafFactor::apply_inverse(Eigen::Ref<Eigen::VectorXd> v) const {
  if (kind == LeafFactorKind::cholesky) {
    llt.matrixL().solveInPlace(v);
  } else {
    v = evec * (sqrt_eval.cwiseInverse().asDiagonal() * (evec.transpose() * v));
  }
}

void LeafFactor::apply_inverse_transpose(Eigen::Ref<Eigen::VectorXd> v) const {
  if (kind == LeafFactorKind::cholesky) {
    llt.matrixU().solveInPlace(v);
  } else {
    apply_inverse(v);  // symmetric factor
  }
}

void LeafFactor::apply_inverse_cols(Eigen::Ref<Eigen::MatrixXd> b) const {
  if (kind == LeafFactorKind::cholesky) {
    llt.matrixL().solveInPlace(b);
  } else {
    b = evec * (sqrt_eval.cwiseInverse().asDiagonal() * (evec.transpose() * b));
  }
}

void LevelUpdate::apply(Eigen::Ref<Eigen::VectorXd> v) const {
  const int r = static_cast<int>(Q0.cols());
  Eigen::VectorXd t(2 * r);
  t.head(r).noalias() = Q0.transpose() * v.segment(start, m0);
  t.tail(r).noalias() = Q1.transpose() * v.segment(start + m0, m1);
  const Eigen::VectorXd s = G * t;
  v.segment(start, m0).noalias() += Q0 * s.head(r);
  v.segment(start + m0, m1).noalias() += Q1 * s.tail(r);
}

void LevelUpdate::apply_inverse(Eigen::Ref<Eigen::VectorXd> v) const {
  const int r = static_cast<int>(Q0.cols());
  Eigen::VectorXd t(2 * r);
  t.head(r).noalias() = Q0.transpose() * v.segment(start, m0);
  t.tail(r).noalias() = Q1.transpose() * v.segment(start + m0, m1);
  const Eigen::VectorXd s = Ginv * t;
  v.segment(start, m0).noalias() += Q0 * s.head(r);
  v.segment(start + m0, m1).noalias() += Q1 * s.tail(r);
}

void LevelUpdate::apply_inverse_local(Eigen::Ref<Eigen::MatrixXd> b) const {
  const int r = static_cast<int>(Q0.cols());
  Eigen::MatrixXd t(2 * r, b.cols());
  t.topRows(r).noalias() = Q0.transpose() * b.topRows(m0);
  t.bottomRows(r).noalias() = Q1.transpose() * b.bottomRows(m1);
  const Eigen::MatrixXd s = Ginv * t;
  b.topRows(m0).noalias() += Q0 * s.topRows(r);
  b.bottomRows(m1).noalias() += Q1 * s.bottomRows(r);
}

Eigen::VectorXd FactorCore::apply_W(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  if (v.size() != n) throw InvalidArgument("symmetric factor apply: length mismatch");
  Eigen::VectorXd out = v;
  // W = A_leaf X_{l-1} ... X_0: root update first, leaf factor last.
  for (auto it = updates.rbegin(); it != updates.rend(); ++it) it->apply(out);
  for (const auto& lf : leaves) lf.apply(out.segment(lf.start, lf.size));
  return out;
}

Eigen::VectorXd FactorCore::solve(const Eigen::Ref<const Eigen::VectorXd>& b) const {
  if (b.size() != n) throw InvalidArgument("hodlr solve: length mismatch");
  Eigen::VectorXd x = b;
  // (W W^T)^-1 = W^-T X^-1... X^-1 W_leaf^-1, expanded around the update list.
  for (const auto& lf : leaves) lf.apply_inverse(x.segment(lf.start, lf.size));
  for (const auto& u : updates) u.apply_inverse(x);            // deepest -> root
  for (auto it = updates.rbegin(); it != updates.rend(); ++it) it->apply_inverse(x);
  for (const auto& lf : leaves) lf.apply_inverse_transpose(x.segment(lf.start, lf.size));
  return x;
}

namespace {

// Walk from the root towards the node covering [s, s+len) and hand every
// strictly shallower ancestor's skinny factor slice to fn. `which` is 0 when
// the range lies in the ancestor's left child (so in its U), 1 otherwise.
struct ScaledFactors {
  // Mutable copies of the off-diagonal factors, keyed by node pointer.
  std::unordered_map<const HodlrMatrix::Node*, Eigen::MatrixXd> U, V;
};

template <class Fn>
void for_each_ancestor_slice(const HodlrMatrix::Node* root, int s, int len, int max_depth,
                             Fn&& fn) {
  const HodlrMatrix::Node* node = root;
  while (!node->is_leaf() && node->depth < max_depth) {
    const int mid = node->child0->start + node->child0->size;
    if (s < mid) {
      fn(node, 0, s - node->child0->start);
      node = node->child0.get();
    } else {
      fn(node, 1, s - node->child1->start);
      node = node->child1.get();
    }
    (void)len;
  }
}

std::string block_id(int depth, int start, int size) {
  return "level " + std::to_string(depth) + ", rows [" + std::to_string(start) + ", " +
         std::to_string(start + size) + ")";
}

}  // namespace

FactorCore build_factor_core(const HodlrMatrix& H, LeafFactorKind kind) {
  if (H.empty()) throw InvalidArgument("hodlr factorize: empty matrix");
  FactorCore core;
  core.n = H.size();

  const HodlrMatrix::Node* root = H.root();

  // Collect nodes by depth.
  std::vector<const HodlrMatrix::Node*> leaves;
  std::vector<std::vector<const HodlrMatrix::Node*>> internal_by_depth;
  std::function<void(const HodlrMatrix::Node*)> walk = [&](const HodlrMatrix::Node* node) {
    if (node->is_leaf()) {
      leaves.push_back(node);
      return;
    }
    if (static_cast<int>(internal_by_depth.size()) <= node->depth) {
      internal_by_depth.resize(node->depth + 1);
    }
    internal_by_depth[node->depth].push_back(node);
    walk(node->child0.get());
    walk(node->child1.get());
  };
  walk(root);

  ScaledFactors scaled;
  for (const auto& lvl : internal_by_depth) {
    for (const auto* q : lvl) {
      scaled.U.emplace(q, q->off.U);
      scaled.V.emplace(q, q->off.V);
    }
  }

  // Stage 1: dense factor per leaf; scale every ancestor factor slice by its inverse.
  for (const auto* lf_node : leaves) {
    LeafFactor lf;
    lf.start = lf_node->start;
    lf.size = lf_node->size;
    lf.depth = lf_node->depth;
    lf.kind = kind;
    if (kind == LeafFactorKind::cholesky) {
      lf.llt.compute(lf_node->dense);
      if (lf.llt.info() != Eigen::Success) {
        throw NotSpdError("hodlr factorize: indefinite or singular leaf block at " +
                          block_id(lf_node->depth, lf_node->start, lf_node->size) +
                          "; decrease eps or increase the nugget");
      }
      lf.logdet = lf.llt.matrixLLT().diagonal().array().log().sum();
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lf_node->dense);
      if (eig.info() != Eigen::Success) {
        throw NotSpdError("hodlr factorize: eigensolver failed on leaf block at " +
                          block_id(lf_node->depth, lf_node->start, lf_node->size));
      }
      const double lmax = eig.eigenvalues().cwiseAbs().maxCoeff();
      if (eig.eigenvalues().minCoeff() <= 1e-15 * std::max(lmax, 1e-300)) {
        throw NotSpdError("hodlr factorize: indefinite or singular leaf block at " +
                          block_id(lf_node->depth, lf_node->start, lf_node->size) +
                          "; decrease eps or increase the nugget");
      }
      lf.evec = eig.eigenvectors();
      lf.sqrt_eval = eig.eigenvalues().cwiseSqrt();
      lf.logdet = lf.sqrt_eval.array().log().sum();
    }
    core.logdet_W += lf.logdet;

    for_each_ancestor_slice(root, lf.start, lf.size, lf_node->depth,
                            [&](const HodlrMatrix::Node* anc, int which, int offset) {
                              Eigen::MatrixXd& skinny =
                                  which == 0 ? scaled.U[anc] : scaled.V[anc];
                              if (skinny.cols() == 0) return;
                              auto rows = skinny.middleRows(offset, lf.size);
                              lf.apply_inverse_cols(rows);
                            });
    core.leaves.push_back(std::move(lf));
  }

  // Stage 2: one identity-plus-low-rank factor per internal node, deepest first.
  for (int depth = static_cast<int>(internal_by_depth.size()) - 1; depth >= 0; --depth) {
    for (const auto* q : internal_by_depth[depth]) {
      const Eigen::MatrixXd& Ut = scaled.U[q];
      const Eigen::MatrixXd& Vt = scaled.V[q];
      const int r = static_cast<int>(Ut.cols());
      if (r == 0) continue;
      LevelUpdate up;
      up.start = q->start;
      up.m0 = q->child0->size;
      up.m1 = q->child1->size;
      up.depth = depth;

      Eigen::HouseholderQR<Eigen::MatrixXd> qr0(Ut), qr1(Vt);
      up.Q0 = qr0.householderQ() * Eigen::MatrixXd::Identity(up.m0, r);
      up.Q1 = qr1.householderQ() * Eigen::MatrixXd::Identity(up.m1, r);
      const Eigen::MatrixXd R0 =
          qr0.matrixQR().topRows(r).triangularView<Eigen::Upper>();
      const Eigen::MatrixXd R1 =
          qr1.matrixQR().topRows(r).triangularView<Eigen::Upper>();

      Eigen::MatrixXd S = Eigen::MatrixXd::Identity(2 * r, 2 * r);
      S.topRightCorner(r, r).noalias() = R0 * R1.transpose();
      S.bottomLeftCorner(r, r) = S.topRightCorner(r, r).transpose();

      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
      if (eig.info() != Eigen::Success) {
        throw NotSpdError("hodlr factorize: eigensolver failed on update at " +
                          block_id(depth, q->start, q->size));
      }
      Eigen::VectorXd lam = eig.eigenvalues();
      const double lmax = lam.cwiseAbs().maxCoeff();
      // Round-off-scale dips below zero are clamped (the matrix is SPD to
      // working precision); anything larger means the compression genuinely
      // broke positive definiteness.
      if (lam.minCoeff() < -1e-9 * lmax) {
        throw NotSpdError(
            "hodlr factorize: indefinite low-rank update at " +
            block_id(depth, q->start, q->size) +
            " (matrix not SPD at this tolerance); decrease eps or increase the nugget");
      }
      lam = lam.cwiseMax(1e-15 * lmax);
      const Eigen::VectorXd sq = lam.cwiseSqrt();
      const Eigen::MatrixXd& E = eig.eigenvectors();
      up.G.noalias() = E * (sq.array() - 1.0).matrix().asDiagonal() * E.transpose();
      up.Ginv.noalias() =
          E * (sq.array().inverse() - 1.0).matrix().asDiagonal() * E.transpose();
      up.logdet = 0.5 * lam.array().log().sum();
      core.logdet_W += up.logdet;

      for_each_ancestor_slice(root, q->start, q->size, depth,
                              [&](const HodlrMatrix::Node* anc, int which, int offset) {
                                Eigen::MatrixXd& skinny =
                                    which == 0 ? scaled.U[anc] : scaled.V[anc];
                                if (skinny.cols() == 0) return;
                                auto rows = skinny.middleRows(offset, up.m0 + up.m1);
                                up.apply_inverse_local(rows);
                              });
      core.updates.push_back(std::move(up));
    }
  }
  // updates were pushed deepest-first already; FactorCore::solve relies on it.
  return core;
}

}  // namespace detail

Eigen::VectorXd HodlrFactorization::solve(const Eigen::Ref<const Eigen::VectorXd>& b) const {
  return core_.solve(b);
}

double HodlrFactorization::logdet() const { return core_.logdet(); }

Eigen::VectorXd SymmetricFactor::apply(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  return core_.apply_W(v);
}

HodlrFactorization factorize(const HodlrMatrix& H) {
  hodlr_stats::factorize_count.fetch_add(1, std::memory_order_relaxed);
  HodlrFactorization f;
  f.core_ = detail::build_factor_core(H, LeafFactorKind::cholesky);
  return f;
}

SymmetricFactor symmetric_factorize(const HodlrMatrix& H) {
  hodlr_stats::symmetric_factorize_count.fetch_add(1, std::memory_order_relaxed);
  SymmetricFactor w;
  w.core_ = detail::build_factor_core(H, LeafFactorKind::symmetric_root);
  return w;
}

}  // namespace hgp
