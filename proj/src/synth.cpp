#include "hgp/synth.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "hgp/common.hpp"

namespace hgp {

Eigen::VectorXd truncated_normal_vec(Rng& rng, int n, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("truncated_normal_vec: need lo < hi");
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) {
    double v;
    do {
      v = rng.normal();
    } while (v < lo || v > hi);
    x[i] = v;
  }
  return x;
}

GpSim simulate_gp_1d(const GpSimConfig& cfg) {
  Rng rng(cfg.seed);
  GpSim sim;
  sim.x_train = truncated_normal_vec(rng, cfg.n, cfg.x_lo, cfg.x_hi);
  sim.x_test = truncated_normal_vec(rng, cfg.n_test, cfg.x_lo, cfg.x_hi);

  const int total = cfg.n + cfg.n_test;
  Eigen::MatrixXd pts(total, 1);
  pts.col(0).head(cfg.n) = sim.x_train;
  pts.col(0).tail(cfg.n_test) = sim.x_test;

  // Joint draw of the latent function; a small jitter keeps the Cholesky stable.
  KernelParams p{cfg.sigma_f_sq, cfg.rho, 1e-8 * cfg.sigma_f_sq};
  const Eigen::MatrixXd K = build_dense_covariance(pts, p, nullptr, total);
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) {
    throw NotSpdError("simulate_gp_1d: joint kernel matrix not SPD");
  }
  const Eigen::VectorXd f = llt.matrixL() * rng.normal_vec(total);
  sim.f_train = f.head(cfg.n);
  sim.f_test = f.tail(cfg.n_test);
  sim.y_train =
      sim.f_train + rng.normal_vec(cfg.n) / std::sqrt(cfg.tau);
  return sim;
}

}  // namespace hgp
