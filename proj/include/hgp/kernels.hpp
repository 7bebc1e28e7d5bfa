#pragma once

#include <vector>

#include <Eigen/Core>

#include "hgp/common.hpp"

namespace hgp {

/// Squared-exponential kernel parameters, k(x,x') = sigma_f_sq * exp(-rho * ||x-x'||^2).
/// rho is an inverse-squared-length-scale: rho = 1 / (2 * l^2) for length scale l.
/// The nugget is the diagonal jitter added at matrix-build time, never inside
/// eval_kernel itself.
struct KernelParams {
  double sigma_f_sq = 1.0;
  double rho = 1.0;
  double nugget = 0.0;

  void validate() const;
};

/// k(a, b) for the squared-exponential kernel. Nugget excluded.
double eval_kernel(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b,
                   const KernelParams& p);

/// Ordering permutation for kernel-matrix assembly: ascending coordinate for
/// d=1, kd-tree order (recursive median splits, cycling dimensions) for d>1.
/// Returns `order` with sorted[k] = points.row(order[k]).
std::vector<int> sort_inputs(const Eigen::MatrixXd& points);

/// Observations collapsed onto unique sorted inputs.
struct Dataset {
  Eigen::MatrixXd points;             // U x d, sorted ascending / kd order
  std::vector<int> perm;              // sort order of the original rows
  std::vector<int> obs_to_unique;     // original row -> unique index
  Eigen::VectorXd y_avg;              // group means, length U
  Eigen::VectorXi mult;               // group sizes |Q_i|
  double ss_within = 0.0;             // sum over groups of sum (y - group mean)^2
  long n_original = 0;
  double y_std_raw = 1.0;             // sample sd of the raw responses
  double y_scale = 1.0;               // scale already divided out of y_avg

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  bool has_duplicates() const;

  /// Copy with responses divided by the raw sample sd (y_scale records it).
  Dataset standardized() const;
};

/// Group identical rows of X, average their responses, record multiplicities.
Dataset collapse_duplicates(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

/// Dense covariance matrix over sorted points: K_ij = k(x_i, x_j), nugget on
/// the diagonal, plus 1/noise_precisions[i] on the diagonal when given.
/// Refuses n above dense_limit.
Eigen::MatrixXd build_dense_covariance(const Eigen::MatrixXd& points, const KernelParams& p,
                                       const Eigen::VectorXd* noise_precisions = nullptr,
                                       int dense_limit = 8192);

/// Unit-correlation covariance row between one new input and the training
/// points (no nugget): c_i = exp(-rho * ||x* - x_i||^2).
Eigen::VectorXd correlation_vector(const Eigen::RowVectorXd& x_star,
                                   const Eigen::MatrixXd& points, double rho);

}  // namespace hgp
