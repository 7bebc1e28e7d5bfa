#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hgp/hodlr.hpp"
#include "hgp/kernels.hpp"
#include "hgp/rng.hpp"

namespace hgp {

/// Conjugate prior constants and the discrete length-scale support:
/// tau ~ Ga(a1/2, b1/2), 1/sigma_f^2 ~ Ga(a2/2, b2/2), rho uniform on rho_grid.
struct PriorSpec {
  double a1 = 1.0, b1 = 1.0, a2 = 1.0, b2 = 1.0;
  std::vector<double> rho_grid;

  void validate() const;
};

/// r log-spaced grid values on [1/(4 range^2), 100/range^2].
std::vector<double> default_rho_grid(double input_range, int r = 100);

/// Per-grid-point cache: unit-variance correlation matrix, its factorization,
/// its symmetric factor, and the log-determinant.
struct GridEntry {
  double rho = 0.0;
  HodlrMatrix corr;
  HodlrFactorization fact;
  SymmetricFactor sym;
  double logdet = 0.0;

  Eigen::VectorXd solve_corr(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    return fact.solve(v);
  }
  double quad_form(const Eigen::Ref<const Eigen::VectorXd>& f) const {
    return f.dot(fact.solve(f));
  }
};

struct GridPrecomp {
  std::vector<GridEntry> entries;
  double eps = 0.0;
  int leaf_size = 0;
  double nugget_rel = 0.0;

  int size() const { return static_cast<int>(entries.size()); }
};

GridEntry build_grid_entry(const Eigen::MatrixXd& points, double rho, double corr_eps,
                           int leaf_size, double nugget_rel);
GridPrecomp build_grid(const Dataset& ds, const std::vector<double>& rho_grid, double eps,
                       int leaf_size, double nugget_rel = 1e-10);

/// Construction tolerance for the unit-correlation tree so that, at the given
/// hyperparameters, K~ = sigma_f^2 C~ meets eps*/tau and M~ = tau K~ + I meets
/// eps*, with eps* = tau * eps when tau < 1 and eps otherwise.
double alg1_corr_tolerance(double eps, double tau, double sigma_f_sq);

/// One function-posterior draw: Z** = w + K~ r where Z = sqrt(tau) K~ a + W b,
/// M~ w = Z, M~ r = tau y, giving Z** ~ N(tau Sigma~ y, Sigma~) with
/// Sigma~ = K~ M~^-1. The overload without m_fact refactorizes M~ itself.
Eigen::VectorXd sample_f(const Eigen::Ref<const Eigen::VectorXd>& y, double tau,
                         double sigma_f_sq, const GridEntry& g,
                         const HodlrFactorization& m_fact, Rng& rng);
Eigen::VectorXd sample_f(const Eigen::Ref<const Eigen::VectorXd>& y, double tau,
                         double sigma_f_sq, const GridEntry& g, Rng& rng);

/// Heteroskedastic draw: Z*** = K~ P~^-1 y + D^-1 P~^-1 (K~ a + W b) with
/// a ~ N(0, D), b ~ N(0, I), P~ = K~ + D^-1; distribution
/// N(K~ P~^-1 y, D^-1 P~^-1 K~).
Eigen::VectorXd sample_f_hetero(const Eigen::Ref<const Eigen::VectorXd>& y,
                                double sigma_f_sq,
                                const Eigen::Ref<const Eigen::VectorXd>& noise_precisions,
                                const GridEntry& g, const HodlrFactorization& p_fact,
                                Rng& rng);
Eigen::VectorXd sample_f_hetero(const Eigen::Ref<const Eigen::VectorXd>& y,
                                double sigma_f_sq,
                                const Eigen::Ref<const Eigen::VectorXd>& noise_precisions,
                                const GridEntry& g, Rng& rng);

/// tau | - ~ Ga((a1+n)/2, (b1 + (y-f)'(y-f))/2).
double sample_tau(const Eigen::Ref<const Eigen::VectorXd>& y,
                  const Eigen::Ref<const Eigen::VectorXd>& f, double a1, double b1,
                  Rng& rng);

/// Collapsed variant over unique inputs: residual sum of squares decomposed as
/// sum_i |Q_i| (ybar_i - f_i)^2 + within-group SS, with shape (a1 + n_original)/2.
double sample_tau_collapsed(const Eigen::Ref<const Eigen::VectorXd>& y_avg,
                            const Eigen::Ref<const Eigen::VectorXd>& f,
                            const Eigen::VectorXi& mult, double ss_within,
                            long n_original, double a1, double b1, Rng& rng);

/// 1/sigma_f^2 | - ~ Ga((a2+n)/2, (b2 + f' C~^-1 f)/2); returns sigma_f^2.
double sample_sigma_f(const Eigen::Ref<const Eigen::VectorXd>& f, const GridEntry& g,
                      double a2, double b2, Rng& rng);

/// Unnormalized log Pr(rho = s_l | -) = -0.5 (logdet C~_l + n log sigma_f^2)
///                                      -0.5 f' C~_l^-1 f / sigma_f^2.
std::vector<double> rho_log_weights(const Eigen::Ref<const Eigen::VectorXd>& f,
                                    double sigma_f_sq, const GridPrecomp& grid);
int sample_rho(const Eigen::Ref<const Eigen::VectorXd>& f, double sigma_f_sq,
               const GridPrecomp& grid, Rng& rng);

/// Predictive Gaussian at one new input given f and the cached grid entry:
/// mu* = k*n K^-1 f, var* = k** - k*n K^-1 kn*.
struct Prediction {
  double mean = 0.0;
  double var = 0.0;
};
Prediction predict(const Eigen::RowVectorXd& x_star,
                   const Eigen::Ref<const Eigen::VectorXd>& f, const GridEntry& g,
                   const Eigen::MatrixXd& train_points, double sigma_f_sq);

/// Per-grid-entry cache of C~^-1 c_* columns for a fixed prediction set.
class Predictor {
 public:
  Predictor(const Eigen::MatrixXd& train_points, const Eigen::MatrixXd& pred_points,
            const GridPrecomp& grid, double nugget_rel);
  int count() const { return static_cast<int>(pred_points_.rows()); }
  /// Means and variances at every prediction point for the current state.
  void predict_all(const Eigen::Ref<const Eigen::VectorXd>& f, int rho_idx,
                   double sigma_f_sq, Eigen::VectorXd& mean, Eigen::VectorXd& var);

 private:
  const Eigen::MatrixXd train_points_;
  const Eigen::MatrixXd pred_points_;
  const GridPrecomp& grid_;
  double nugget_rel_;
  std::map<int, Eigen::MatrixXd> solved_;  // grid idx -> C~^-1 [c_*1 ... c_*m]
  std::map<int, Eigen::VectorXd> quad_;    // grid idx -> c_*' C~^-1 c_*
};

struct GibbsOptions {
  double eps = 1e-8;
  int leaf_size = 64;
  long iters = 27000;
  long burn_in = 2000;
  long thin = 10;
  std::uint64_t seed = 1;
  double nugget_rel = 1e-10;
  int dup_precision_power = 2;  // collapsed noise precision |Q_i|^p * tau
  bool standardize = true;
  bool store_f = false;
  Eigen::MatrixXd predict_points;  // n* x d; empty disables prediction

  long retained_count() const { return thin > 0 ? (iters - burn_in) / thin : 0; }
  void validate() const;
};

struct PhaseTimings {
  double setup_s = 0.0;
  double sampling_s = 0.0;
  double prediction_s = 0.0;
};

/// Thinned post-burn-in draws, already mapped back to the original response
/// units. rho holds grid values, rho_idx the grid positions.
struct GibbsChain {
  std::vector<long> iteration;
  Eigen::VectorXd tau, sigma_f_sq, rho;
  std::vector<int> rho_idx;
  Eigen::MatrixXd f_draws;     // retained x U when store_f
  Eigen::MatrixXd pred_draws;  // retained x n*
  Eigen::MatrixXd pred_mean;   // retained x n* (predictive means per draw)
  std::uint64_t seed = 0;
  std::string generator;
  double y_scale = 1.0;
  PhaseTimings timings;
  long grid_factorizations = 0;
  long iteration_factorizations = 0;

  long retained() const { return static_cast<long>(iteration.size()); }
};

GibbsChain run_gibbs(const Dataset& ds, const PriorSpec& priors, const GibbsOptions& opt);

}  // namespace hgp
