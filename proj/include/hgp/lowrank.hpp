#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "hgp/common.hpp"

namespace hgp {

/// Low-rank representation block ~= U * V^T.
struct LowRankFactor {
  Eigen::MatrixXd U;  // m x r
  Eigen::MatrixXd V;  // n x r
  double achieved_tol = 0.0;  // estimated max |U V^T - block|
  bool truncated = false;     // hit the rank cap before reaching tolerance
  bool exhaustive = false;    // every entry was touched (dense fallback path)
  std::vector<int> pivot_rows, pivot_cols;  // rows/cols fully evaluated by ACA

  int rank() const { return static_cast<int>(U.cols()); }
};

struct LowRankOptions {
  int dense_fallback_max = 64;  // both dims <= this: dense truncated SVD
  int probe_count = 32;         // random entries cross-checking the pivot estimate
  double pivot_safety = 10.0;   // residual max-norm proxy: safety * |last pivot|
  int max_rank = -1;            // default min(m,n)
};

namespace detail {

// Small deterministic generator for probe locations; independent of the
// sampler RNG so factorization stays reproducible in isolation.
class ProbeGen {
 public:
  explicit ProbeGen(std::uint64_t seed = 0x9e3779b97f4a7c15ull) : s_(seed) {}
  int next(int bound) {
    s_ ^= s_ << 13;
    s_ ^= s_ >> 7;
    s_ ^= s_ << 17;
    return static_cast<int>(s_ % static_cast<std::uint64_t>(bound));
  }

 private:
  std::uint64_t s_;
};

}  // namespace detail

/// Tolerance-driven factorization of an implicitly given m x n block.
/// Adaptive cross approximation with partial pivoting; blocks small in both
/// dimensions go through a dense truncated SVD instead. The returned factor
/// satisfies max |U V^T - block| <= eps up to the estimator's confidence and
/// touches O((m+n) r) entries on the ACA path.
template <class Accessor>
LowRankFactor factor_block(Accessor&& block, int m, int n, double eps,
                           const LowRankOptions& opt = {}) {
  if (m <= 0 || n <= 0) throw InvalidArgument("factor_block: empty block");
  if (!(eps > 0.0)) throw InvalidArgument("factor_block: eps must be positive");

  LowRankFactor f;

  if (m <= opt.dense_fallback_max && n <= opt.dense_fallback_max) {
    Eigen::MatrixXd A(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = block(i, j);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    int r = 0;
    while (r < sv.size() && sv[r] > eps) ++r;
    f.U = svd.matrixU().leftCols(r) * sv.head(r).asDiagonal();
    f.V = svd.matrixV().leftCols(r);
    f.exhaustive = true;
    if (r > 0) {
      f.achieved_tol = (A - f.U * f.V.transpose()).cwiseAbs().maxCoeff();
    } else {
      f.achieved_tol = A.size() > 0 ? A.cwiseAbs().maxCoeff() : 0.0;
    }
    return f;
  }

  const int cap = opt.max_rank > 0 ? std::min(opt.max_rank, std::min(m, n)) : std::min(m, n);
  std::vector<Eigen::VectorXd> us, vs;
  std::vector<char> row_used(m, 0), col_used(n, 0);
  detail::ProbeGen probes;

  auto residual_row = [&](int i) {
    Eigen::VectorXd r(n);
    for (int j = 0; j < n; ++j) r[j] = block(i, j);
    for (std::size_t k = 0; k < us.size(); ++k) r -= us[k][i] * vs[k];
    return r;
  };
  auto residual_col = [&](int j) {
    Eigen::VectorXd c(m);
    for (int i = 0; i < m; ++i) c[i] = block(i, j);
    for (std::size_t k = 0; k < us.size(); ++k) c -= vs[k][j] * us[k];
    return c;
  };
  auto residual_entry = [&](int i, int j) {
    double v = block(i, j);
    for (std::size_t k = 0; k < us.size(); ++k) v -= us[k][i] * vs[k][j];
    return v;
  };
  auto next_unused_row = [&](int from) {
    for (int i = from; i < m; ++i)
      if (!row_used[i]) return i;
    return -1;
  };

  int pivot_i = 0;
  bool converged = false;
  while (static_cast<int>(us.size()) < cap) {
    if (pivot_i < 0 || row_used[pivot_i]) pivot_i = next_unused_row(0);
    if (pivot_i < 0) {
      converged = true;  // every row interpolated exactly
      break;
    }
    Eigen::VectorXd r = residual_row(pivot_i);
    for (int j = 0; j < n; ++j)
      if (col_used[j]) r[j] = 0.0;
    int pivot_j = 0;
    double delta = 0.0;
    for (int j = 0; j < n; ++j) {
      if (std::abs(r[j]) > std::abs(delta)) {
        delta = r[j];
        pivot_j = j;
      }
    }

    if (opt.pivot_safety * std::abs(delta) <= eps) {
      // Candidate stop: verify with random probes; a failing probe names the
      // row where residual mass is hiding and restarts the iteration there.
      int bad_i = -1;
      double worst = 0.0;
      for (int t = 0; t < opt.probe_count; ++t) {
        const int pi = probes.next(m), pj = probes.next(n);
        const double e = std::abs(residual_entry(pi, pj));
        if (e > worst) {
          worst = e;
          bad_i = pi;
        }
      }
      if (worst <= eps) {
        converged = true;
        break;
      }
      if (bad_i >= 0 && !row_used[bad_i] && bad_i != pivot_i) {
        pivot_i = bad_i;
        continue;
      }
      // Probe row already consumed; fall through and accept the current pivot
      // if it is nonzero, otherwise move to another row.
      if (delta == 0.0) {
        pivot_i = next_unused_row(pivot_i + 1);
        continue;
      }
    }
    if (delta == 0.0) {
      pivot_i = next_unused_row(pivot_i + 1);
      continue;
    }

    Eigen::VectorXd c = residual_col(pivot_j);
    Eigen::VectorXd u = c / delta;
    Eigen::VectorXd v = r;
    // Balance the pair: keeps intermediate norms near sqrt(||u v^T||) so the
    // factorization downstream does not lose precision forming cross products.
    const double nu = u.norm(), nv = v.norm();
    if (nu > 0 && nv > 0) {
      const double s = std::sqrt(nu / nv);
      u /= s;
      v *= s;
    }
    us.push_back(std::move(u));
    vs.push_back(std::move(v));
    row_used[pivot_i] = 1;
    col_used[pivot_j] = 1;
    f.pivot_rows.push_back(pivot_i);
    f.pivot_cols.push_back(pivot_j);

    int next_i = -1;
    double best = -1.0;
    for (int i = 0; i < m; ++i) {
      if (row_used[i]) continue;
      const double a = std::abs(c[i]);
      if (a > best) {
        best = a;
        next_i = i;
      }
    }
    pivot_i = next_i;
  }

  const int r = static_cast<int>(us.size());
  f.U.resize(m, r);
  f.V.resize(n, r);
  for (int k = 0; k < r; ++k) {
    f.U.col(k) = us[k];
    f.V.col(k) = vs[k];
  }
  f.truncated = !converged && r == cap;

  double est = 0.0;
  for (int t = 0; t < opt.probe_count; ++t) {
    est = std::max(est, std::abs(residual_entry(probes.next(m), probes.next(n))));
  }
  f.achieved_tol = est;
  return f;
}

/// Max |U V^T - block| over n_probes random entries plus every entry the
/// factorization touched (pivot cross for ACA, the whole block for the dense
/// fallback).
template <class Accessor>
double estimate_max_error(const LowRankFactor& f, Accessor&& block, int m, int n,
                          int n_probes) {
  if (n_probes < 1) throw InvalidArgument("estimate_max_error: n_probes must be >= 1");
  auto err = [&](int i, int j) {
    double v = block(i, j);
    if (f.rank() > 0) v -= f.U.row(i).dot(f.V.row(j));
    return std::abs(v);
  };
  double worst = 0.0;
  if (f.exhaustive) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) worst = std::max(worst, err(i, j));
  } else {
    for (int i : f.pivot_rows)
      for (int j = 0; j < n; ++j) worst = std::max(worst, err(i, j));
    for (int j : f.pivot_cols)
      for (int i = 0; i < m; ++i) worst = std::max(worst, err(i, j));
  }
  detail::ProbeGen probes(0xdeadbeefcafef00dull);
  for (int t = 0; t < n_probes; ++t) {
    worst = std::max(worst, err(probes.next(m), probes.next(n)));
  }
  return worst;
}

}  // namespace hgp
