#include "hgp/tensor.hpp"

#include <chrono>
#include <cmath>
#include <map>

namespace hgp {

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

AxisIndex build_axis_index(const Eigen::Ref<const Eigen::VectorXd>& column) {
  const int n = static_cast<int>(column.size());
  if (n == 0) throw InvalidArgument("build_axis_index: empty column");
  Eigen::MatrixXd pts(n, 1);
  pts.col(0) = column;
  const Dataset ds = collapse_duplicates(pts, Eigen::VectorXd::Zero(n));
  AxisIndex ax;
  ax.unique_vals = ds.points.col(0);
  ax.obs_to_unique = ds.obs_to_unique;
  ax.mult = ds.mult;
  return ax;
}

void TensorOptions::validate() const {
  if (n_bases < 1) throw InvalidArgument("TensorOptions: n_bases must be >= 1");
  if (!(eps > 0)) throw InvalidArgument("TensorOptions: eps must be positive");
  if (leaf_size < 8) throw InvalidArgument("TensorOptions: leaf_size must be >= 8");
  if (iters < 1 || burn_in < 0 || thin < 1 || burn_in >= iters) {
    throw InvalidArgument("TensorOptions: bad iteration counts");
  }
  if (rho_grid_size < 1) throw InvalidArgument("TensorOptions: rho_grid_size must be >= 1");
  if (!(beta_prior_var > 0)) throw InvalidArgument("TensorOptions: beta_prior_var must be > 0");
  if (!(precision_floor > 0)) throw InvalidArgument("TensorOptions: precision_floor must be > 0");
}

double tensor_predict(const Eigen::RowVectorXd& x_star, const TensorState& st,
                      const std::vector<AxisIndex>& axes,
                      const std::vector<GridPrecomp>& grids, Rng* rng) {
  const int d = static_cast<int>(axes.size());
  if (x_star.size() != d) throw InvalidArgument("tensor_predict: dimension mismatch");
  double out = 0.0;
  for (std::size_t b = 0; b < st.f.size(); ++b) {
    double prod = 1.0;
    for (int h = 0; h < d; ++h) {
      Eigen::MatrixXd train(axes[h].size(), 1);
      train.col(0) = axes[h].unique_vals;
      const GridEntry& g = grids[h].entries[st.rho_idx[b][h]];
      Eigen::RowVectorXd x1(1);
      x1[0] = x_star[h];
      const Prediction p = predict(x1, st.f[b][h], g, train, 1.0);
      prod *= rng ? p.mean + std::sqrt(p.var) * rng->normal() : p.mean;
    }
    out += st.beta[b] * prod;
  }
  return out;
}

TensorChain run_tensor_gibbs(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const TensorOptions& opt) {
  opt.validate();
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  if (n == 0 || d < 1) throw InvalidArgument("run_tensor_gibbs: empty data");
  if (y.size() != n) throw InvalidArgument("run_tensor_gibbs: |X| != |y|");

  // Standardize responses by their sample sd; surfaces are rescaled on output.
  double y_scale = 1.0;
  if (opt.standardize && n > 1) {
    const double var = (y.array() - y.mean()).square().sum() / (n - 1);
    if (var > 0) y_scale = std::sqrt(var);
  }
  const Eigen::VectorXd ys = y / y_scale;

  TensorChain chain;
  chain.seed = opt.seed;
  chain.generator = Rng::generator_name();
  chain.y_scale = y_scale;

  const double t0 = now_s();
  std::vector<AxisIndex> axes(d);
  std::vector<GridPrecomp> grids(d);
  for (int h = 0; h < d; ++h) {
    axes[h] = build_axis_index(X.col(h));
    const double range =
        axes[h].unique_vals.maxCoeff() - axes[h].unique_vals.minCoeff();
    const auto grid_vals =
        default_rho_grid(range > 0 ? range : 1.0, opt.rho_grid_size);
    Eigen::MatrixXd pts(axes[h].size(), 1);
    pts.col(0) = axes[h].unique_vals;
    grids[h].eps = opt.eps;
    grids[h].leaf_size = opt.leaf_size;
    grids[h].nugget_rel = opt.nugget_rel;
    for (double rho : grid_vals) {
      grids[h].entries.push_back(
          build_grid_entry(pts, rho, opt.eps, opt.leaf_size, opt.nugget_rel));
    }
  }
  chain.timings.setup_s = now_s() - t0;

  Rng rng(opt.seed);
  const int nb = opt.n_bases;

  TensorState st;
  st.f.assign(nb, std::vector<Eigen::VectorXd>(d));
  st.beta.resize(nb);
  st.rho_idx.assign(nb, std::vector<int>(d, 0));
  st.tau = 1.0;
  for (int b = 0; b < nb; ++b) {
    st.beta[b] = b == 0 ? 1.0 : 0.1;
    for (int h = 0; h < d; ++h) {
      st.rho_idx[b][h] = grids[h].size() / 2;
      if (b == 0) {
        st.f[b][h] = Eigen::VectorXd::Ones(axes[h].size());
      } else {
        // Smooth small-amplitude start; later bases activate only if the
        // residual asks for them.
        const GridEntry& g = grids[h].entries[st.rho_idx[b][h]];
        st.f[b][h] = 0.1 * g.sym.apply(rng.normal_vec(axes[h].size()));
      }
    }
  }

  // Per-observation factor values, refreshed whenever a factor is redrawn.
  std::vector<std::vector<Eigen::VectorXd>> fv(nb, std::vector<Eigen::VectorXd>(d));
  auto refresh_fv = [&](int b, int h) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = st.f[b][h][axes[h].obs_to_unique[i]];
    fv[b][h] = std::move(v);
  };
  for (int b = 0; b < nb; ++b)
    for (int h = 0; h < d; ++h) refresh_fv(b, h);
  auto basis_product = [&](int b) {
    Eigen::VectorXd p = Eigen::VectorXd::Ones(n);
    for (int h = 0; h < d; ++h) p = p.cwiseProduct(fv[b][h]);
    return p;
  };

  const long kept = opt.retained_count();
  chain.beta.resize(kept, nb);
  chain.tau.resize(kept);
  chain.rho_idx.resize(kept, nb * d);
  const int n_pred = static_cast<int>(opt.predict_points.rows());
  if (n_pred > 0 && opt.predict_points.cols() != d) {
    throw InvalidArgument("run_tensor_gibbs: prediction point dimension mismatch");
  }
  chain.surface_draws.resize(kept, n_pred);
  chain.surface_mean.resize(kept, n_pred);
  if (opt.store_state) chain.states.reserve(kept);

  // Per-(axis, grid-index) cache of C~^-1 c_* columns for the prediction set.
  struct AxisPredCache {
    Eigen::MatrixXd solved;  // U_h x n_pred
    Eigen::VectorXd quad;    // n_pred
  };
  std::vector<std::map<int, AxisPredCache>> pred_cache(d);
  auto axis_pred = [&](int h, int grid_idx) -> const AxisPredCache& {
    auto it = pred_cache[h].find(grid_idx);
    if (it == pred_cache[h].end()) {
      const GridEntry& g = grids[h].entries[grid_idx];
      Eigen::MatrixXd pts(axes[h].size(), 1);
      pts.col(0) = axes[h].unique_vals;
      AxisPredCache cache;
      cache.solved.resize(axes[h].size(), n_pred);
      cache.quad.resize(n_pred);
      for (int j = 0; j < n_pred; ++j) {
        Eigen::RowVectorXd x1(1);
        x1[0] = opt.predict_points(j, h);
        const Eigen::VectorXd c = correlation_vector(x1, pts, g.rho);
        cache.solved.col(j) = g.solve_corr(c);
        cache.quad[j] = c.dot(cache.solved.col(j));
      }
      it = pred_cache[h].emplace(grid_idx, std::move(cache)).first;
    }
    return it->second;
  };

  const double t1 = now_s();
  double pred_s = 0.0;
  long slot = 0;
  for (long t = 1; t <= opt.iters; ++t) {
    for (int b = 0; b < nb; ++b) {
      // Residual with every other basis removed.
      Eigen::VectorXd resid = ys;
      for (int b2 = 0; b2 < nb; ++b2) {
        if (b2 != b) resid -= st.beta[b2] * basis_product(b2);
      }
      for (int h = 0; h < d; ++h) {
        const int uh = axes[h].size();
        // Pseudo-observations of f_{b,h}: resid_i / (beta_b prod_{k!=h} f_k),
        // precision tau beta_b^2 (prod_{k!=h} f_k)^2, floored against
        // near-zero factor products, aggregated per unique axis value.
        Eigen::VectorXd dvec = Eigen::VectorXd::Zero(uh);
        Eigen::VectorXd zsum = Eigen::VectorXd::Zero(uh);
        for (int i = 0; i < n; ++i) {
          double denom = st.beta[b];
          for (int k = 0; k < d; ++k) {
            if (k != h) denom *= fv[b][k][i];
          }
          double prec = st.tau * denom * denom;
          double val = 0.0;
          if (prec >= opt.precision_floor) {
            val = resid[i] / denom;
          } else {
            prec = opt.precision_floor;
          }
          const int uidx = axes[h].obs_to_unique[i];
          dvec[uidx] += prec;
          zsum[uidx] += prec * val;
        }
        const Eigen::VectorXd z = zsum.cwiseQuotient(dvec);
        const GridEntry& g = grids[h].entries[st.rho_idx[b][h]];
        st.f[b][h] = sample_f_hetero(z, 1.0, dvec, g, rng);
        st.rho_idx[b][h] = sample_rho(st.f[b][h], 1.0, grids[h], rng);
        refresh_fv(b, h);
      }
      // Conjugate normal update for beta_b given the factors.
      const Eigen::VectorXd gcol = basis_product(b);
      const double prec_post = 1.0 / opt.beta_prior_var + st.tau * gcol.squaredNorm();
      const double mean_post = st.tau * gcol.dot(resid) / prec_post;
      st.beta[b] = mean_post + rng.normal() / std::sqrt(prec_post);
    }
    {
      Eigen::VectorXd fitted = Eigen::VectorXd::Zero(n);
      for (int b = 0; b < nb; ++b) fitted += st.beta[b] * basis_product(b);
      st.tau = sample_tau(ys, fitted, opt.a1, opt.b1, rng);
    }

    if (t > opt.burn_in && (t - opt.burn_in) % opt.thin == 0) {
      for (int b = 0; b < nb; ++b) {
        chain.beta(slot, b) = st.beta[b];
        for (int h = 0; h < d; ++h) chain.rho_idx(slot, b * d + h) = st.rho_idx[b][h];
      }
      chain.tau[slot] = st.tau;
      if (n_pred > 0) {
        const double tp0 = now_s();
        Eigen::VectorXd surf_mean = Eigen::VectorXd::Zero(n_pred);
        Eigen::VectorXd surf_draw = Eigen::VectorXd::Zero(n_pred);
        for (int b = 0; b < nb; ++b) {
          Eigen::VectorXd prod_mean = Eigen::VectorXd::Ones(n_pred);
          Eigen::VectorXd prod_draw = Eigen::VectorXd::Ones(n_pred);
          for (int h = 0; h < d; ++h) {
            const AxisPredCache& cache = axis_pred(h, st.rho_idx[b][h]);
            const Eigen::VectorXd mu = cache.solved.transpose() * st.f[b][h];
            for (int j = 0; j < n_pred; ++j) {
              const double var = std::max(1.0 - cache.quad[j], 0.0);
              prod_mean[j] *= mu[j];
              prod_draw[j] *= mu[j] + std::sqrt(var) * rng.normal();
            }
          }
          surf_mean += st.beta[b] * prod_mean;
          surf_draw += st.beta[b] * prod_draw;
        }
        chain.surface_mean.row(slot) = surf_mean.transpose();
        chain.surface_draws.row(slot) = surf_draw.transpose();
        pred_s += now_s() - tp0;
      }
      if (opt.store_state) chain.states.push_back(st);
      ++slot;
    }
  }
  chain.timings.prediction_s = pred_s;
  chain.timings.sampling_s = now_s() - t1 - pred_s;

  if (y_scale != 1.0) {
    chain.beta *= y_scale;  // surface scale lives in beta
    chain.tau /= y_scale * y_scale;
    chain.surface_draws *= y_scale;
    chain.surface_mean *= y_scale;
  }
  return chain;
}

}  // namespace hgp
