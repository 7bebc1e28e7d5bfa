#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "hgp/sampler.hpp"

namespace hgp {

/// Per-dimension view of the observations: sorted unique values and the map
/// from each observation to its unique index.
struct AxisIndex {
  Eigen::VectorXd unique_vals;     // U_h, ascending
  std::vector<int> obs_to_unique;  // length n
  Eigen::VectorXi mult;

  int size() const { return static_cast<int>(unique_vals.size()); }
};

AxisIndex build_axis_index(const Eigen::Ref<const Eigen::VectorXd>& column);

/// Latent state of the additive tensor-product surface
/// y_i = sum_b beta_b prod_h f_{b,h}(x_{h,i}) + e_i with unit-variance factors.
struct TensorState {
  std::vector<std::vector<Eigen::VectorXd>> f;  // [basis][dim], length U_h
  Eigen::VectorXd beta;                         // n_bases
  double tau = 1.0;
  std::vector<std::vector<int>> rho_idx;        // [basis][dim]
};

struct TensorOptions {
  int n_bases = 1;
  double eps = 1e-8;
  int leaf_size = 64;
  long iters = 3000;
  long burn_in = 1000;
  long thin = 2;
  std::uint64_t seed = 1;
  double nugget_rel = 1e-10;
  double a1 = 1.0, b1 = 1.0;      // Ga(a1/2, b1/2) prior on tau
  double beta_prior_var = 100.0;  // N(0, v) prior on each beta_b
  double precision_floor = 1e-12;
  int rho_grid_size = 20;         // per-axis log-spaced grid
  bool standardize = true;
  Eigen::MatrixXd predict_points;
  bool store_state = false;

  long retained_count() const { return thin > 0 ? (iters - burn_in) / thin : 0; }
  void validate() const;
};

struct TensorChain {
  Eigen::MatrixXd beta;           // retained x n_bases (original units)
  Eigen::VectorXd tau;            // retained (original units)
  Eigen::MatrixXi rho_idx;        // retained x (n_bases * d), dim-major per basis
  Eigen::MatrixXd surface_draws;  // retained x n* (posterior draws of the surface)
  Eigen::MatrixXd surface_mean;   // retained x n* (means, no predictive draw noise)
  std::vector<TensorState> states;  // retained states when store_state
  std::uint64_t seed = 0;
  std::string generator;
  double y_scale = 1.0;
  PhaseTimings timings;

  long retained() const { return tau.size(); }
};

/// Surface value at one input: sum_b beta_b prod_h f*_{b,h}(x*_h), each factor
/// evaluated (rng == nullptr, predictive mean) or drawn (rng given) from the
/// one-dimensional predictive Gaussian.
double tensor_predict(const Eigen::RowVectorXd& x_star, const TensorState& st,
                      const std::vector<AxisIndex>& axes,
                      const std::vector<GridPrecomp>& grids, Rng* rng = nullptr);

TensorChain run_tensor_gibbs(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const TensorOptions& opt);

}  // namespace hgp
