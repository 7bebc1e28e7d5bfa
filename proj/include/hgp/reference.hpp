#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "hgp/kernels.hpp"
#include "hgp/rng.hpp"
#include "hgp/sampler.hpp"

namespace hgp {

/// Exact GP posterior at fixed hyperparameters: mu_f = tau Sigma_f y,
/// Sigma_f = K (tau K + I)^-1, with a cached symmetric square root.
struct DensePosterior {
  Eigen::VectorXd mu_f;
  Eigen::MatrixXd sigma_f;
  Eigen::MatrixXd sqrt_sigma;  // S with S S^T = sigma_f

  Eigen::VectorXd sample(Rng& rng) const;
};

DensePosterior make_dense_posterior(const Eigen::MatrixXd& K, double tau,
                                    const Eigen::Ref<const Eigen::VectorXd>& y);

/// Heteroskedastic counterpart: mean K (K + D^-1)^-1 y,
/// covariance D^-1 (K + D^-1)^-1 K.
DensePosterior make_dense_posterior_hetero(const Eigen::MatrixXd& K,
                                           const Eigen::Ref<const Eigen::VectorXd>& noise_precisions,
                                           const Eigen::Ref<const Eigen::VectorXd>& y);

/// One draw from the exact posterior (builds the dense posterior internally).
Eigen::VectorXd exact_gp_sample_f(const Eigen::Ref<const Eigen::VectorXd>& y,
                                  const Eigen::MatrixXd& K, double tau, Rng& rng);

/// KL(N(mu0,S0) || N(mu1,S1)); both covariances must be SPD.
double gaussian_kl(const Eigen::Ref<const Eigen::VectorXd>& mu0,
                   const Eigen::MatrixXd& sigma0,
                   const Eigen::Ref<const Eigen::VectorXd>& mu1,
                   const Eigen::MatrixXd& sigma1);

/// Dense functionals feeding the computable posterior KL bound, plus the
/// admissibility conditions on eps.
struct BoundInputs {
  int n = 0;
  double eps = 0.0, tau = 0.0, y_norm_sq = 0.0;
  double sigma_min_K = 0.0, sigma_min_M = 0.0, sigma_max_M = 0.0;
  double norm_Minv_max = 0.0, norm_K_2 = 0.0, norm_Minv_2 = 0.0, tr_Minv = 0.0;

  void check_admissible() const;  // throws naming the violated condition
};

BoundInputs compute_bound_inputs(const Eigen::MatrixXd& K, const Eigen::MatrixXd& M,
                                 double eps, double tau,
                                 const Eigen::Ref<const Eigen::VectorXd>& y);

struct KlBoundParts {
  double part_i = 0.0, part_ii = 0.0, part_iii = 0.0;
  double total = 0.0;  // 0.5 * (part_i + part_ii + part_iii)
};

/// Computable bound on KL(exact posterior || eps-approximated posterior).
KlBoundParts kl_bound(const Eigen::MatrixXd& K, const Eigen::MatrixXd& M, double eps,
                      double tau, const Eigen::Ref<const Eigen::VectorXd>& y);
KlBoundParts kl_bound(const BoundInputs& in);

/// Dense mirror of the hierarchical symmetric factorization: the unique W
/// defined by per-leaf PSD square roots and per-level PSD square roots of the
/// scaled middle matrices, computed with dense algebra only. As the
/// compression tolerance goes to zero the fast factor converges to this W,
/// which is what makes lockstep chain comparisons possible.
Eigen::MatrixXd dense_symmetric_factor_mirror(const Eigen::MatrixXd& A, int leaf_size);

struct ExactGibbsOptions {
  long iters = 27000;
  long burn_in = 2000;
  long thin = 10;
  std::uint64_t seed = 1;
  double nugget_rel = 1e-10;
  bool standardize = true;
  int dup_precision_power = 2;
  bool store_f = false;
  Eigen::MatrixXd predict_points;
  int dense_limit = 8192;

  /// cholesky: W = chol(C), the cheap exact factor.
  /// hierarchical_mirror: W matches the fast sampler's factor structure so
  /// per-iteration draws can be compared in lockstep.
  enum class WMode { cholesky, hierarchical_mirror };
  WMode w_mode = WMode::cholesky;
  int mirror_leaf_size = 64;
};

/// The four Gibbs steps with dense factorizations, consuming random variates
/// in the same order as run_gibbs so that equal seeds give comparable chains.
GibbsChain exact_gibbs_reference(const Dataset& ds, const PriorSpec& priors,
                                 const ExactGibbsOptions& opt);

}  // namespace hgp
