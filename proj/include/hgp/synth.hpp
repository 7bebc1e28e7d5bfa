#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "hgp/kernels.hpp"
#include "hgp/rng.hpp"

namespace hgp {

/// Standard normal truncated to [lo, hi], by rejection.
Eigen::VectorXd truncated_normal_vec(Rng& rng, int n, double lo, double hi);

struct GpSimConfig {
  int n = 1000;
  int n_test = 50;
  double sigma_f_sq = 1.0;
  double rho = 0.25;
  double tau = 30.0;
  double x_lo = -2.0, x_hi = 2.0;
  std::uint64_t seed = 1;
};

/// Inputs from a truncated standard normal, one joint squared-exponential GP
/// draw over train+test inputs, noisy observations at the training inputs.
struct GpSim {
  Eigen::VectorXd x_train, f_train, y_train;
  Eigen::VectorXd x_test, f_test;
};

GpSim simulate_gp_1d(const GpSimConfig& cfg);

}  // namespace hgp
