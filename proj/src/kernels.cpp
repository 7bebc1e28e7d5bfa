#include "hgp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hgp {

void KernelParams::validate() const {
  if (!(sigma_f_sq > 0.0) || !std::isfinite(sigma_f_sq)) {
    throw InvalidArgument("KernelParams: sigma_f_sq must be positive and finite");
  }
  if (!(rho > 0.0) || !std::isfinite(rho)) {
    throw InvalidArgument("KernelParams: rho must be positive and finite");
  }
  if (nugget < 0.0 || !std::isfinite(nugget)) {
    throw InvalidArgument("KernelParams: nugget must be non-negative and finite");
  }
}

double eval_kernel(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b,
                   const KernelParams& p) {
  if (a.size() != b.size()) {
    throw InvalidArgument("eval_kernel: dimension mismatch");
  }
  if (!a.allFinite() || !b.allFinite()) {
    throw InvalidArgument("eval_kernel: non-finite input point");
  }
  p.validate();
  return p.sigma_f_sq * std::exp(-p.rho * (a - b).squaredNorm());
}

namespace {

void kd_order(const Eigen::MatrixXd& pts, std::vector<int>& idx, int lo, int hi, int depth) {
  const int m = hi - lo;
  if (m <= 1) return;
  const int axis = depth % static_cast<int>(pts.cols());
  const int mid = lo + m / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int a, int b) {
                     const double xa = pts(a, axis), xb = pts(b, axis);
                     return xa < xb || (xa == xb && a < b);
                   });
  kd_order(pts, idx, lo, mid, depth + 1);
  kd_order(pts, idx, mid, hi, depth + 1);
}

}  // namespace

std::vector<int> sort_inputs(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  if (n == 0) throw InvalidArgument("sort_inputs: empty input");
  if (points.cols() < 1) throw InvalidArgument("sort_inputs: dimension must be >= 1");
  if (!points.allFinite()) throw InvalidArgument("sort_inputs: non-finite coordinates");

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (points.cols() == 1) {
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      const double xa = points(a, 0), xb = points(b, 0);
      return xa < xb || (xa == xb && a < b);
    });
  } else {
    kd_order(points, idx, 0, n, 0);
  }
  return idx;
}

bool Dataset::has_duplicates() const {
  return n_original != static_cast<long>(points.rows());
}

Dataset Dataset::standardized() const {
  Dataset out = *this;
  const double s = (y_std_raw > 0.0) ? y_std_raw : 1.0;
  out.y_avg /= s;
  out.ss_within /= s * s;
  out.y_scale = y_scale * s;
  return out;
}

Dataset collapse_duplicates(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const int n = static_cast<int>(X.rows());
  if (n == 0) throw InvalidArgument("collapse_duplicates: empty input");
  if (y.size() != n) throw InvalidArgument("collapse_duplicates: |X| != |y|");

  Dataset ds;
  ds.perm = sort_inputs(X);
  ds.n_original = n;
  ds.obs_to_unique.assign(n, -1);

  std::vector<int> group_start;  // positions in perm where a new unique point begins
  group_start.push_back(0);
  for (int k = 1; k < n; ++k) {
    if (X.row(ds.perm[k]) != X.row(ds.perm[k - 1])) group_start.push_back(k);
  }
  const int u = static_cast<int>(group_start.size());

  ds.points.resize(u, X.cols());
  ds.y_avg.resize(u);
  ds.mult.resize(u);
  for (int g = 0; g < u; ++g) {
    const int lo = group_start[g];
    const int hi = (g + 1 < u) ? group_start[g + 1] : n;
    ds.points.row(g) = X.row(ds.perm[lo]);
    double sum = 0.0;
    for (int k = lo; k < hi; ++k) {
      sum += y[ds.perm[k]];
      ds.obs_to_unique[ds.perm[k]] = g;
    }
    ds.mult[g] = hi - lo;
    ds.y_avg[g] = sum / (hi - lo);
    for (int k = lo; k < hi; ++k) {
      const double d = y[ds.perm[k]] - ds.y_avg[g];
      ds.ss_within += d * d;
    }
  }

  if (n > 1) {
    const double mean = y.mean();
    const double var = (y.array() - mean).square().sum() / (n - 1);
    ds.y_std_raw = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return ds;
}

Eigen::MatrixXd build_dense_covariance(const Eigen::MatrixXd& points, const KernelParams& p,
                                       const Eigen::VectorXd* noise_precisions,
                                       int dense_limit) {
  const int n = static_cast<int>(points.rows());
  if (n == 0) throw InvalidArgument("build_dense_covariance: empty input");
  if (n > dense_limit) {
    throw InvalidArgument("build_dense_covariance: n=" + std::to_string(n) +
                          " exceeds the dense limit of " + std::to_string(dense_limit));
  }
  p.validate();
  if (noise_precisions) {
    if (noise_precisions->size() != n) {
      throw InvalidArgument("build_dense_covariance: noise precision length mismatch");
    }
    if ((noise_precisions->array() <= 0.0).any()) {
      throw InvalidArgument("build_dense_covariance: noise precisions must be positive");
    }
  }

  Eigen::MatrixXd K(n, n);
  for (int i = 0; i < n; ++i) {
    K(i, i) = p.sigma_f_sq + p.nugget;
    for (int j = 0; j < i; ++j) {
      const double v =
          p.sigma_f_sq * std::exp(-p.rho * (points.row(i) - points.row(j)).squaredNorm());
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  if (noise_precisions) {
    K.diagonal() += noise_precisions->cwiseInverse();
  }
  return K;
}

Eigen::VectorXd correlation_vector(const Eigen::RowVectorXd& x_star,
                                   const Eigen::MatrixXd& points, double rho) {
  if (x_star.size() != points.cols()) {
    throw InvalidArgument("correlation_vector: dimension mismatch");
  }
  const int n = static_cast<int>(points.rows());
  Eigen::VectorXd c(n);
  for (int i = 0; i < n; ++i) {
    c[i] = std::exp(-rho * (x_star - points.row(i)).squaredNorm());
  }
  return c;
}

}  // namespace hgp
