#include "hgp/sampler.hpp"

#include <chrono>
#include <cmath>

namespace hgp {

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

void PriorSpec::validate() const {
  if (!(a1 > 0) || !(b1 > 0) || !(a2 > 0) || !(b2 > 0)) {
    throw InvalidArgument("PriorSpec: prior constants must be positive");
  }
  if (rho_grid.empty()) throw InvalidArgument("PriorSpec: rho grid is empty");
  for (std::size_t i = 0; i < rho_grid.size(); ++i) {
    if (!(rho_grid[i] > 0)) throw InvalidArgument("PriorSpec: rho grid values must be positive");
    if (i > 0 && !(rho_grid[i] > rho_grid[i - 1])) {
      throw InvalidArgument("PriorSpec: rho grid must be strictly increasing");
    }
  }
}

std::vector<double> default_rho_grid(double input_range, int r) {
  if (!(input_range > 0)) throw InvalidArgument("default_rho_grid: range must be positive");
  if (r < 1) throw InvalidArgument("default_rho_grid: grid size must be >= 1");
  const double lo = 1.0 / (4.0 * input_range * input_range);
  const double hi = 100.0 / (input_range * input_range);
  std::vector<double> grid(r);
  if (r == 1) {
    grid[0] = std::sqrt(lo * hi);
    return grid;
  }
  const double step = (std::log(hi) - std::log(lo)) / (r - 1);
  for (int i = 0; i < r; ++i) grid[i] = std::exp(std::log(lo) + step * i);
  return grid;
}

GridEntry build_grid_entry(const Eigen::MatrixXd& points, double rho, double corr_eps,
                           int leaf_size, double nugget_rel) {
  GridEntry g;
  g.rho = rho;
  KernelParams p{1.0, rho, nugget_rel};
  g.corr = HodlrMatrix::assemble(points, p, corr_eps, leaf_size);
  g.fact = factorize(g.corr);
  g.sym = symmetric_factorize(g.corr);
  g.logdet = g.fact.logdet();
  return g;
}

GridPrecomp build_grid(const Dataset& ds, const std::vector<double>& rho_grid, double eps,
                       int leaf_size, double nugget_rel) {
  if (rho_grid.empty()) throw InvalidArgument("build_grid: empty rho grid");
  GridPrecomp grid;
  grid.eps = eps;
  grid.leaf_size = leaf_size;
  grid.nugget_rel = nugget_rel;
  grid.entries.reserve(rho_grid.size());
  for (double rho : rho_grid) {
    grid.entries.push_back(build_grid_entry(ds.points, rho, eps, leaf_size, nugget_rel));
  }
  return grid;
}

double alg1_corr_tolerance(double eps, double tau, double sigma_f_sq) {
  const double eps_star = tau < 1.0 ? tau * eps : eps;
  return eps_star / (tau * sigma_f_sq);
}

Eigen::VectorXd sample_f(const Eigen::Ref<const Eigen::VectorXd>& y, double tau,
                         double sigma_f_sq, const GridEntry& g,
                         const HodlrFactorization& m_fact, Rng& rng) {
  const int n = g.corr.size();
  if (y.size() != n) throw InvalidArgument("sample_f: length mismatch");
  if (!(tau > 0) || !(sigma_f_sq > 0)) {
    throw InvalidArgument("sample_f: tau and sigma_f_sq must be positive");
  }
  const Eigen::VectorXd a = rng.normal_vec(n);
  const Eigen::VectorXd b = rng.normal_vec(n);
  // Z = sqrt(tau) K~ a + W b with K~ = sigma_f_sq C~, W = sigma_f W_C.
  Eigen::VectorXd z = std::sqrt(tau) * sigma_f_sq * g.corr.matvec(a) +
                      std::sqrt(sigma_f_sq) * g.sym.apply(b);
  const Eigen::VectorXd w = m_fact.solve(z);
  const Eigen::VectorXd r = m_fact.solve(tau * y);
  return w + sigma_f_sq * g.corr.matvec(r);
}

Eigen::VectorXd sample_f(const Eigen::Ref<const Eigen::VectorXd>& y, double tau,
                         double sigma_f_sq, const GridEntry& g, Rng& rng) {
  const HodlrMatrix m = g.corr.scaled(tau * sigma_f_sq, 1.0);
  const HodlrFactorization m_fact = factorize(m);
  return sample_f(y, tau, sigma_f_sq, g, m_fact, rng);
}

Eigen::VectorXd sample_f_hetero(const Eigen::Ref<const Eigen::VectorXd>& y,
                                double sigma_f_sq,
                                const Eigen::Ref<const Eigen::VectorXd>& noise_precisions,
                                const GridEntry& g, const HodlrFactorization& p_fact,
                                Rng& rng) {
  const int n = g.corr.size();
  if (y.size() != n || noise_precisions.size() != n) {
    throw InvalidArgument("sample_f_hetero: length mismatch");
  }
  if ((noise_precisions.array() <= 0.0).any()) {
    throw InvalidArgument("sample_f_hetero: noise precisions must be positive");
  }
  const Eigen::VectorXd a =
      rng.normal_vec(n).cwiseProduct(noise_precisions.cwiseSqrt());  // a ~ N(0, D)
  const Eigen::VectorXd b = rng.normal_vec(n);
  const Eigen::VectorXd z =
      sigma_f_sq * g.corr.matvec(a) + std::sqrt(sigma_f_sq) * g.sym.apply(b);
  const Eigen::VectorXd z_ss = p_fact.solve(z).cwiseQuotient(noise_precisions);
  const Eigen::VectorXd r = sigma_f_sq * g.corr.matvec(p_fact.solve(y));
  return r + z_ss;
}

Eigen::VectorXd sample_f_hetero(const Eigen::Ref<const Eigen::VectorXd>& y,
                                double sigma_f_sq,
                                const Eigen::Ref<const Eigen::VectorXd>& noise_precisions,
                                const GridEntry& g, Rng& rng) {
  const HodlrMatrix p =
      g.corr.scaled_with_diagonal(sigma_f_sq, noise_precisions.cwiseInverse());
  const HodlrFactorization p_fact = factorize(p);
  return sample_f_hetero(y, sigma_f_sq, noise_precisions, g, p_fact, rng);
}

double sample_tau(const Eigen::Ref<const Eigen::VectorXd>& y,
                  const Eigen::Ref<const Eigen::VectorXd>& f, double a1, double b1,
                  Rng& rng) {
  if (y.size() != f.size()) throw InvalidArgument("sample_tau: length mismatch");
  const double n = static_cast<double>(y.size());
  const double rss = (y - f).squaredNorm();
  return rng.gamma(0.5 * (a1 + n), 0.5 * (b1 + rss));
}

double sample_tau_collapsed(const Eigen::Ref<const Eigen::VectorXd>& y_avg,
                            const Eigen::Ref<const Eigen::VectorXd>& f,
                            const Eigen::VectorXi& mult, double ss_within,
                            long n_original, double a1, double b1, Rng& rng) {
  if (y_avg.size() != f.size() || mult.size() != f.size()) {
    throw InvalidArgument("sample_tau_collapsed: length mismatch");
  }
  const double rss =
      (y_avg - f).array().square().matrix().dot(mult.cast<double>()) + ss_within;
  return rng.gamma(0.5 * (a1 + static_cast<double>(n_original)), 0.5 * (b1 + rss));
}

double sample_sigma_f(const Eigen::Ref<const Eigen::VectorXd>& f, const GridEntry& g,
                      double a2, double b2, Rng& rng) {
  const double n = static_cast<double>(f.size());
  const double rate = 0.5 * (b2 + g.quad_form(f));
  const double prec = rng.gamma(0.5 * (a2 + n), rate);
  return 1.0 / prec;
}

std::vector<double> rho_log_weights(const Eigen::Ref<const Eigen::VectorXd>& f,
                                    double sigma_f_sq, const GridPrecomp& grid) {
  const double n = static_cast<double>(f.size());
  std::vector<double> logw(grid.entries.size());
  for (std::size_t l = 0; l < grid.entries.size(); ++l) {
    const auto& g = grid.entries[l];
    logw[l] = -0.5 * (g.logdet + n * std::log(sigma_f_sq)) -
              0.5 * g.quad_form(f) / sigma_f_sq;
  }
  return logw;
}

int sample_rho(const Eigen::Ref<const Eigen::VectorXd>& f, double sigma_f_sq,
               const GridPrecomp& grid, Rng& rng) {
  return categorical_from_log_weights(rho_log_weights(f, sigma_f_sq, grid), rng);
}

Prediction predict(const Eigen::RowVectorXd& x_star,
                   const Eigen::Ref<const Eigen::VectorXd>& f, const GridEntry& g,
                   const Eigen::MatrixXd& train_points, double sigma_f_sq) {
  const Eigen::VectorXd c = correlation_vector(x_star, train_points, g.rho);
  const Eigen::VectorXd cinv = g.solve_corr(c);
  Prediction out;
  out.mean = cinv.dot(f);
  out.var = sigma_f_sq * std::max(1.0 - c.dot(cinv), 0.0);
  return out;
}

Predictor::Predictor(const Eigen::MatrixXd& train_points,
                     const Eigen::MatrixXd& pred_points, const GridPrecomp& grid,
                     double nugget_rel)
    : train_points_(train_points),
      pred_points_(pred_points),
      grid_(grid),
      nugget_rel_(nugget_rel) {
  if (pred_points_.rows() > 0 && pred_points_.cols() != train_points_.cols()) {
    throw InvalidArgument("Predictor: prediction point dimension mismatch");
  }
}

void Predictor::predict_all(const Eigen::Ref<const Eigen::VectorXd>& f, int rho_idx,
                            double sigma_f_sq, Eigen::VectorXd& mean,
                            Eigen::VectorXd& var) {
  const int m = count();
  mean.resize(m);
  var.resize(m);
  if (m == 0) return;
  auto it = solved_.find(rho_idx);
  if (it == solved_.end()) {
    const auto& g = grid_.entries[rho_idx];
    Eigen::MatrixXd sol(train_points_.rows(), m);
    Eigen::VectorXd quad(m);
    for (int j = 0; j < m; ++j) {
      const Eigen::VectorXd c =
          correlation_vector(pred_points_.row(j), train_points_, g.rho);
      sol.col(j) = g.solve_corr(c);
      quad[j] = c.dot(sol.col(j));
    }
    it = solved_.emplace(rho_idx, std::move(sol)).first;
    quad_.emplace(rho_idx, std::move(quad));
  }
  const Eigen::MatrixXd& sol = it->second;
  const Eigen::VectorXd& quad = quad_.at(rho_idx);
  mean.noalias() = sol.transpose() * f;
  var = (sigma_f_sq * (1.0 - quad.array()).max(0.0)).matrix();
}

void GibbsOptions::validate() const {
  if (!(eps > 0)) throw InvalidArgument("GibbsOptions: eps must be positive");
  if (leaf_size < 8) throw InvalidArgument("GibbsOptions: leaf_size must be >= 8");
  if (iters < 1 || burn_in < 0 || thin < 1 || burn_in >= iters) {
    throw InvalidArgument("GibbsOptions: need iters >= 1, 0 <= burn_in < iters, thin >= 1");
  }
  if (dup_precision_power != 1 && dup_precision_power != 2) {
    throw InvalidArgument("GibbsOptions: dup_precision_power must be 1 or 2");
  }
  if (!(nugget_rel >= 0)) throw InvalidArgument("GibbsOptions: nugget_rel must be >= 0");
}

GibbsChain run_gibbs(const Dataset& ds, const PriorSpec& priors, const GibbsOptions& opt) {
  opt.validate();
  priors.validate();
  if (ds.size() == 0) throw InvalidArgument("run_gibbs: empty dataset");

  const Dataset work = opt.standardize ? ds.standardized() : ds;
  const int u = work.size();
  const Eigen::VectorXd& y = work.y_avg;
  const bool dups = work.has_duplicates();

  Eigen::VectorXd dup_prec_base;  // |Q_i|^p, multiplies tau in the noise precision
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

  const double t_setup0 = now_s();
  const long fact0 = hodlr_stats::factorize_count.load();
  const GridPrecomp grid = build_grid(work, priors.rho_grid, opt.eps, opt.leaf_size,
                                      opt.nugget_rel);
  chain.grid_factorizations = hodlr_stats::factorize_count.load() - fact0;
  Predictor predictor(work.points, opt.predict_points, grid, opt.nugget_rel);
  chain.timings.setup_s = now_s() - t_setup0;

  Rng rng(opt.seed);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(u);
  double tau = 1.0;
  double sigma_f_sq = 1.0;
  int rho_idx = grid.size() / 2;

  const long kept = opt.retained_count();
  chain.iteration.reserve(kept);
  chain.tau.resize(kept);
  chain.sigma_f_sq.resize(kept);
  chain.rho.resize(kept);
  chain.rho_idx.reserve(kept);
  if (opt.store_f) chain.f_draws.resize(kept, u);
  const int n_pred = predictor.count();
  chain.pred_draws.resize(kept, n_pred);
  chain.pred_mean.resize(kept, n_pred);

  const long fact1 = hodlr_stats::factorize_count.load();
  const double t_sample0 = now_s();
  double pred_s = 0.0;
  long slot = 0;
  Eigen::VectorXd pmean, pvar;
  for (long t = 1; t <= opt.iters; ++t) {
    const GridEntry& g = grid.entries[rho_idx];
    if (dups) {
      const Eigen::VectorXd d = tau * dup_prec_base;
      const HodlrMatrix p = g.corr.scaled_with_diagonal(sigma_f_sq, d.cwiseInverse());
      const HodlrFactorization p_fact = factorize(p);
      f = sample_f_hetero(y, sigma_f_sq, d, g, p_fact, rng);
    } else {
      const HodlrMatrix m = g.corr.scaled(tau * sigma_f_sq, 1.0);
      const HodlrFactorization m_fact = factorize(m);
      f = sample_f(y, tau, sigma_f_sq, g, m_fact, rng);
    }
    tau = sample_tau_collapsed(y, f, work.mult, work.ss_within, work.n_original,
                               priors.a1, priors.b1, rng);
    sigma_f_sq = sample_sigma_f(f, grid.entries[rho_idx], priors.a2, priors.b2, rng);
    rho_idx = sample_rho(f, sigma_f_sq, grid, rng);

    if (t > opt.burn_in && (t - opt.burn_in) % opt.thin == 0) {
      chain.iteration.push_back(t);
      chain.tau[slot] = tau;
      chain.sigma_f_sq[slot] = sigma_f_sq;
      chain.rho[slot] = grid.entries[rho_idx].rho;
      chain.rho_idx.push_back(rho_idx);
      if (opt.store_f) chain.f_draws.row(slot) = f.transpose();
      if (n_pred > 0) {
        const double tp0 = now_s();
        predictor.predict_all(f, rho_idx, sigma_f_sq, pmean, pvar);
        for (int j = 0; j < n_pred; ++j) {
          chain.pred_mean(slot, j) = pmean[j];
          chain.pred_draws(slot, j) = pmean[j] + std::sqrt(pvar[j]) * rng.normal();
        }
        pred_s += now_s() - tp0;
      }
      ++slot;
    }
  }
  chain.iteration_factorizations = hodlr_stats::factorize_count.load() - fact1;
  chain.timings.prediction_s = pred_s;
  chain.timings.sampling_s = now_s() - t_sample0 - pred_s;

  // Map draws back to the original response units.
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
