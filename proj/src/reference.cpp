#include "hgp/reference.hpp"

#include <chrono>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace hgp {

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& A, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  if (eig.info() != Eigen::Success) {
    throw NotSpdError(std::string(what) + ": eigensolver failed");
  }
  const Eigen::VectorXd& lam = eig.eigenvalues();
  const double lmax = lam.cwiseAbs().maxCoeff();
  if (lam.minCoeff() < -1e-10 * std::max(lmax, 1.0)) {
    throw NotSpdError(std::string(what) + ": matrix is indefinite");
  }
  const Eigen::VectorXd s = lam.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

Eigen::VectorXd DensePosterior::sample(Rng& rng) const {
  return mu_f + sqrt_sigma * rng.normal_vec(mu_f.size());
}

DensePosterior make_dense_posterior(const Eigen::MatrixXd& K, double tau,
                                    const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (K.rows() != K.cols() || K.rows() != y.size()) {
    throw InvalidArgument("make_dense_posterior: shape mismatch");
  }
  Eigen::MatrixXd M = tau * K;
  M.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) {
    throw NotSpdError("make_dense_posterior: tau K + I is not SPD");
  }
  DensePosterior out;
  out.sigma_f = llt.solve(K);  // M^-1 K; symmetrized next
  out.sigma_f = 0.5 * (out.sigma_f + out.sigma_f.transpose()).eval();
  out.mu_f = tau * (out.sigma_f * y);
  out.sqrt_sigma = psd_sqrt(out.sigma_f, "make_dense_posterior");
  return out;
}

DensePosterior make_dense_posterior_hetero(
    const Eigen::MatrixXd& K, const Eigen::Ref<const Eigen::VectorXd>& noise_precisions,
    const Eigen::Ref<const Eigen::VectorXd>& y) {
  const int n = static_cast<int>(K.rows());
  if (K.cols() != n || noise_precisions.size() != n || y.size() != n) {
    throw InvalidArgument("make_dense_posterior_hetero: shape mismatch");
  }
  if ((noise_precisions.array() <= 0.0).any()) {
    throw InvalidArgument("make_dense_posterior_hetero: precisions must be positive");
  }
  Eigen::MatrixXd P = K;
  P.diagonal() += noise_precisions.cwiseInverse();
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success) {
    throw NotSpdError("make_dense_posterior_hetero: K + D^-1 is not SPD");
  }
  DensePosterior out;
  const Eigen::MatrixXd pinv_k = llt.solve(K);
  out.sigma_f = noise_precisions.cwiseInverse().asDiagonal() * pinv_k;
  out.sigma_f = 0.5 * (out.sigma_f + out.sigma_f.transpose()).eval();
  out.mu_f = K * llt.solve(y);
  out.sqrt_sigma = psd_sqrt(out.sigma_f, "make_dense_posterior_hetero");
  return out;
}

Eigen::VectorXd exact_gp_sample_f(const Eigen::Ref<const Eigen::VectorXd>& y,
                                  const Eigen::MatrixXd& K, double tau, Rng& rng) {
  return make_dense_posterior(K, tau, y).sample(rng);
}

double gaussian_kl(const Eigen::Ref<const Eigen::VectorXd>& mu0,
                   const Eigen::MatrixXd& sigma0,
                   const Eigen::Ref<const Eigen::VectorXd>& mu1,
                   const Eigen::MatrixXd& sigma1) {
  const int n = static_cast<int>(mu0.size());
  if (sigma0.rows() != n || sigma0.cols() != n || mu1.size() != n || sigma1.rows() != n ||
      sigma1.cols() != n) {
    throw InvalidArgument("gaussian_kl: shape mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt0(sigma0), llt1(sigma1);
  if (llt0.info() != Eigen::Success) throw NotSpdError("gaussian_kl: sigma0 not SPD");
  if (llt1.info() != Eigen::Success) throw NotSpdError("gaussian_kl: sigma1 not SPD");
  const double logdet0 =
      2.0 * llt0.matrixLLT().diagonal().array().log().sum();
  const double logdet1 =
      2.0 * llt1.matrixLLT().diagonal().array().log().sum();
  const double tr = llt1.solve(sigma0).trace();
  const Eigen::VectorXd d = mu1 - mu0;
  const double quad = d.dot(llt1.solve(d));
  const double kl = 0.5 * (logdet1 - logdet0 + tr - n + quad);
  return std::max(kl, 0.0);
}

void BoundInputs::check_admissible() const {
  const double n2 = static_cast<double>(n) * n;
  if (!(eps < sigma_min_K / n2)) {
    throw InvalidArgument("kl_bound: admissibility violated: need eps < sigma_min(K)/n^2");
  }
  if (!(eps < 1.0 / (n * norm_Minv_2))) {
    throw InvalidArgument("kl_bound: admissibility violated: need eps < 1/(n ||M^-1||_2)");
  }
  if (!(eps < sigma_min_M / n2)) {
    throw InvalidArgument("kl_bound: admissibility violated: need eps < sigma_min(M)/n^2");
  }
}

BoundInputs compute_bound_inputs(const Eigen::MatrixXd& K, const Eigen::MatrixXd& M,
                                 double eps, double tau,
                                 const Eigen::Ref<const Eigen::VectorXd>& y) {
  const int n = static_cast<int>(K.rows());
  if (K.cols() != n || M.rows() != n || M.cols() != n || y.size() != n) {
    throw InvalidArgument("compute_bound_inputs: shape mismatch");
  }
  if (eps < 0) throw InvalidArgument("compute_bound_inputs: eps must be >= 0");
  BoundInputs in;
  in.n = n;
  in.eps = eps;
  in.tau = tau;
  in.y_norm_sq = y.squaredNorm();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigK(K), eigM(M);
  if (eigK.info() != Eigen::Success || eigM.info() != Eigen::Success) {
    throw NotSpdError("compute_bound_inputs: eigensolver failed");
  }
  in.sigma_min_K = eigK.eigenvalues().minCoeff();
  in.sigma_min_M = eigM.eigenvalues().minCoeff();
  in.sigma_max_M = eigM.eigenvalues().maxCoeff();
  if (in.sigma_min_K <= 0 || in.sigma_min_M <= 0) {
    throw NotSpdError("compute_bound_inputs: K and M must be SPD");
  }
  in.norm_K_2 = eigK.eigenvalues().cwiseAbs().maxCoeff();
  in.norm_Minv_2 = 1.0 / in.sigma_min_M;
  const Eigen::MatrixXd minv =
      eigM.eigenvectors() * eigM.eigenvalues().cwiseInverse().asDiagonal() *
      eigM.eigenvectors().transpose();
  in.norm_Minv_max = minv.cwiseAbs().maxCoeff();
  in.tr_Minv = minv.trace();
  return in;
}

KlBoundParts kl_bound(const BoundInputs& in) {
  KlBoundParts out;
  if (in.eps == 0.0) return out;
  in.check_admissible();
  const double n = static_cast<double>(in.n);
  const double n2 = n * n;
  const double eps = in.eps;

  out.part_i = 2.0 * n2 * eps;

  const double gap_K = in.sigma_min_K - n2 * eps;
  out.part_ii = in.norm_Minv_max * n2 * eps +
                std::pow(n, 2.5) * eps / std::sqrt(gap_K) +
                n * n2 * std::abs(in.tr_Minv) * eps * eps / gap_K;

  const double gap_M = in.sigma_min_M - n2 * eps;
  const double prefactor =
      in.tau * in.tau * std::sqrt((in.sigma_max_M + n2 * eps) / gap_K) * in.y_norm_sq;
  const double bracket =
      n * eps * in.norm_K_2 * in.norm_Minv_2 * in.norm_Minv_2 /
          (1.0 - n * eps * in.norm_Minv_2) +
      n * eps / std::sqrt(gap_M);
  out.part_iii = prefactor * bracket * bracket;

  out.total = 0.5 * (out.part_i + out.part_ii + out.part_iii);
  return out;
}

KlBoundParts kl_bound(const Eigen::MatrixXd& K, const Eigen::MatrixXd& M, double eps,
                      double tau, const Eigen::Ref<const Eigen::VectorXd>& y) {
  return kl_bound(compute_bound_inputs(K, M, eps, tau, y));
}

namespace {

Eigen::MatrixXd mirror_rec(const Eigen::MatrixXd& A, int depth, int levels) {
  const int n = static_cast<int>(A.rows());
  if (depth == levels) {
    return psd_sqrt(A, "dense_symmetric_factor_mirror: leaf");
  }
  const int m0 = split_left(n);
  const int m1 = n - m0;
  const Eigen::MatrixXd W0 = mirror_rec(A.topLeftCorner(m0, m0), depth + 1, levels);
  const Eigen::MatrixXd W1 = mirror_rec(A.bottomRightCorner(m1, m1), depth + 1, levels);
  // Bhat = W0^-1 A01 W1^-T
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu0(W0), lu1(W1);
  Eigen::MatrixXd bhat = lu0.solve(Eigen::MatrixXd(A.topRightCorner(m0, m1)));
  bhat = lu1.solve(Eigen::MatrixXd(bhat.transpose())).transpose();
  Eigen::MatrixXd S = Eigen::MatrixXd::Identity(n, n);
  S.topRightCorner(m0, m1) = bhat;
  S.bottomLeftCorner(m1, m0) = bhat.transpose();
  const Eigen::MatrixXd X = psd_sqrt(S, "dense_symmetric_factor_mirror: middle");
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
  W.topLeftCorner(m0, m0) = W0;
  W.bottomRightCorner(m1, m1) = W1;
  return W * X;
}

}  // namespace

Eigen::MatrixXd dense_symmetric_factor_mirror(const Eigen::MatrixXd& A, int leaf_size) {
  if (A.rows() != A.cols()) {
    throw InvalidArgument("dense_symmetric_factor_mirror: matrix must be square");
  }
  const int levels = hodlr_levels(static_cast<int>(A.rows()), leaf_size);
  return mirror_rec(A, 0, levels);
}

GibbsChain exact_gibbs_reference(const Dataset& ds, const PriorSpec& priors,
                                 const ExactGibbsOptions& opt) {
  priors.validate();
  if (ds.size() == 0) throw InvalidArgument("exact_gibbs_reference: empty dataset");
  if (ds.size() > opt.dense_limit) {
    throw InvalidArgument("exact_gibbs_reference: n exceeds the dense limit");
  }
  if (opt.iters < 1 || opt.burn_in < 0 || opt.thin < 1 || opt.burn_in >= opt.iters) {
    throw InvalidArgument("exact_gibbs_reference: bad iteration counts");
  }

  const Dataset work = opt.standardize ? ds.standardized() : ds;
  const int u = work.size();
  const Eigen::VectorXd& y = work.y_avg;
  const bool dups = work.has_duplicates();

  Eigen::VectorXd dup_prec_base;
  if (dups) {
    dup_prec_base = work.mult.cast<double>();
    if (opt.dup_precision_power == 2) {
      dup_prec_base = dup_prec_base.cwiseProduct(dup_prec_base);
    }
  }

  GibbsChain chain;
  chain.seed = opt.seed;
  chain.generator = Rng::generator_name();
  chain.y_scale = work.y_scale;

  // Dense per-grid-point precomputation: correlation matrix, Cholesky,
  // log-determinant, and the symmetric factor used by the function draw.
  const double t0 = now_s();
  const int r = static_cast<int>(priors.rho_grid.size());
  std::vector<Eigen::MatrixXd> corr(r);
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt(r);
  std::vector<double> logdet(r);
  std::vector<Eigen::MatrixXd> wfac(r);
  for (int l = 0; l < r; ++l) {
    KernelParams p{1.0, priors.rho_grid[l], opt.nugget_rel};
    corr[l] = build_dense_covariance(work.points, p, nullptr, opt.dense_limit);
    llt[l].compute(corr[l]);
    if (llt[l].info() != Eigen::Success) {
      throw NotSpdError("exact_gibbs_reference: correlation matrix not SPD at rho=" +
                        std::to_string(priors.rho_grid[l]));
    }
    logdet[l] = 2.0 * llt[l].matrixLLT().diagonal().array().log().sum();
    if (opt.w_mode == ExactGibbsOptions::WMode::hierarchical_mirror) {
      wfac[l] = dense_symmetric_factor_mirror(corr[l], opt.mirror_leaf_size);
    } else {
      wfac[l] = llt[l].matrixL();
    }
  }
  // Lazy prediction solves per grid index.
  const int n_pred = static_cast<int>(opt.predict_points.rows());
  std::vector<Eigen::MatrixXd> pred_solved(r);
  std::vector<Eigen::VectorXd> pred_quad(r);
  chain.timings.setup_s = now_s() - t0;

  Rng rng(opt.seed);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(u);
  double tau = 1.0;
  double sigma_f_sq = 1.0;
  int rho_idx = r / 2;

  const long kept = (opt.iters - opt.burn_in) / opt.thin;
  chain.iteration.reserve(kept);
  chain.tau.resize(kept);
  chain.sigma_f_sq.resize(kept);
  chain.rho.resize(kept);
  chain.rho_idx.reserve(kept);
  if (opt.store_f) chain.f_draws.resize(kept, u);
  chain.pred_draws.resize(kept, n_pred);
  chain.pred_mean.resize(kept, n_pred);

  const double t1 = now_s();
  double pred_s = 0.0;
  long slot = 0;
  for (long t = 1; t <= opt.iters; ++t) {
    const Eigen::MatrixXd& c = corr[rho_idx];
    const Eigen::VectorXd a = rng.normal_vec(u);
    const Eigen::VectorXd b = rng.normal_vec(u);
    if (dups) {
      const Eigen::VectorXd d = tau * dup_prec_base;
      const Eigen::VectorXd a_scaled = a.cwiseProduct(d.cwiseSqrt());
      Eigen::MatrixXd P = sigma_f_sq * c;
      P.diagonal() += d.cwiseInverse();
      Eigen::LLT<Eigen::MatrixXd> lltP(P);
      if (lltP.info() != Eigen::Success) {
        throw NotSpdError("exact_gibbs_reference: K + D^-1 not SPD at iteration " +
                          std::to_string(t));
      }
      const Eigen::VectorXd z =
          sigma_f_sq * (c * a_scaled) + std::sqrt(sigma_f_sq) * (wfac[rho_idx] * b);
      f = sigma_f_sq * (c * lltP.solve(y)) + lltP.solve(z).cwiseQuotient(d);
    } else {
      Eigen::MatrixXd M = (tau * sigma_f_sq) * c;
      M.diagonal().array() += 1.0;
      Eigen::LLT<Eigen::MatrixXd> lltM(M);
      if (lltM.info() != Eigen::Success) {
        throw NotSpdError("exact_gibbs_reference: tau K + I not SPD at iteration " +
                          std::to_string(t));
      }
      const Eigen::VectorXd z = std::sqrt(tau) * sigma_f_sq * (c * a) +
                                std::sqrt(sigma_f_sq) * (wfac[rho_idx] * b);
      const Eigen::VectorXd w = lltM.solve(z);
      const Eigen::VectorXd rr = lltM.solve(tau * y);
      f = w + sigma_f_sq * (c * rr);
    }
    tau = sample_tau_collapsed(y, f, work.mult, work.ss_within, work.n_original,
                               priors.a1, priors.b1, rng);
    {
      const double rate = 0.5 * (priors.b2 + f.dot(llt[rho_idx].solve(f)));
      sigma_f_sq = 1.0 / rng.gamma(0.5 * (priors.a2 + u), rate);
    }
    {
      std::vector<double> logw(r);
      for (int l = 0; l < r; ++l) {
        logw[l] = -0.5 * (logdet[l] + u * std::log(sigma_f_sq)) -
                  0.5 * f.dot(llt[l].solve(f)) / sigma_f_sq;
      }
      rho_idx = categorical_from_log_weights(logw, rng);
    }

    if (t > opt.burn_in && (t - opt.burn_in) % opt.thin == 0) {
      chain.iteration.push_back(t);
      chain.tau[slot] = tau;
      chain.sigma_f_sq[slot] = sigma_f_sq;
      chain.rho[slot] = priors.rho_grid[rho_idx];
      chain.rho_idx.push_back(rho_idx);
      if (opt.store_f) chain.f_draws.row(slot) = f.transpose();
      if (n_pred > 0) {
        const double tp0 = now_s();
        if (pred_solved[rho_idx].size() == 0) {
          Eigen::MatrixXd cs(u, n_pred);
          for (int j = 0; j < n_pred; ++j) {
            cs.col(j) = correlation_vector(opt.predict_points.row(j), work.points,
                                           priors.rho_grid[rho_idx]);
          }
          pred_solved[rho_idx] = llt[rho_idx].solve(cs);
          pred_quad[rho_idx] =
              (cs.array() * pred_solved[rho_idx].array()).colwise().sum().transpose();
        }
        const Eigen::VectorXd mean = pred_solved[rho_idx].transpose() * f;
        const Eigen::VectorXd var =
            (sigma_f_sq * (1.0 - pred_quad[rho_idx].array()).max(0.0)).matrix();
        for (int j = 0; j < n_pred; ++j) {
          chain.pred_mean(slot, j) = mean[j];
          chain.pred_draws(slot, j) = mean[j] + std::sqrt(var[j]) * rng.normal();
        }
        pred_s += now_s() - tp0;
      }
      ++slot;
    }
  }
  chain.timings.prediction_s = pred_s;
  chain.timings.sampling_s = now_s() - t1 - pred_s;

  const double s = chain.y_scale;
  if (s != 1.0) {
    chain.tau /= s * s;
    chain.sigma_f_sq *= s * s;
    if (opt.store_f) chain.f_draws *= s;
    chain.pred_draws *= s;
    chain.pred_mean *= s;
  }
  return chain;
}

}  // namespace hgp
