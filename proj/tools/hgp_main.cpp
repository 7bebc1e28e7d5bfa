// Command-line front end: data ingestion, chain execution, the dense-oracle
// validation sweep, and the scaling benchmark.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hgp/io.hpp"
#include "hgp/reference.hpp"
#include "hgp/sampler.hpp"
#include "hgp/synth.hpp"
#include "hgp/tensor.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CommonOpts {
  std::string data_path;
  std::string out_dir = "out";
  double eps = 1e-8;
  int leaf_size = 64;
  long iters = 7000, burn_in = 2000, thin = 10;
  std::uint64_t seed = 1;
  double a1 = 1, b1 = 1, a2 = 1, b2 = 1;
  int grid_size = 100;
  double grid_min = 0, grid_max = 0;  // 0,0 -> data-range heuristic
  double holdout = 0.0;
  int predict_grid = 100;
  bool store_f = false;
  int dup_power = 2;
  bool no_standardize = false;
  int chains = 1;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_data) {
  auto* d = cmd->add_option("--data", o.data_path, "input CSV (header x1,...,xd,y)");
  if (needs_data) d->required();
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--eps", o.eps, "construction tolerance (max-norm)");
  cmd->add_option("--leaf-size,-B", o.leaf_size, "maximum diagonal block size");
  cmd->add_option("--iters", o.iters, "total Gibbs iterations");
  cmd->add_option("--burn-in", o.burn_in, "discarded initial iterations");
  cmd->add_option("--thin", o.thin, "retain every thin-th draw");
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--a1", o.a1, "tau prior shape constant");
  cmd->add_option("--b1", o.b1, "tau prior rate constant");
  cmd->add_option("--a2", o.a2, "1/sigma_f^2 prior shape constant");
  cmd->add_option("--b2", o.b2, "1/sigma_f^2 prior rate constant");
  cmd->add_option("--grid-size", o.grid_size, "length-scale grid size");
  cmd->add_option("--grid-min", o.grid_min, "smallest grid rho (0 = auto)");
  cmd->add_option("--grid-max", o.grid_max, "largest grid rho (0 = auto)");
  cmd->add_option("--holdout", o.holdout, "holdout fraction in [0,1)");
  cmd->add_option("--predict-grid", o.predict_grid,
                  "prediction grid size when no holdout is used");
  cmd->add_flag("--store-f", o.store_f, "write latent f draws into the chain CSV");
  cmd->add_option("--dup-power", o.dup_power,
                  "duplicate-input noise precision multiplier |Q_i|^p, p in {1,2}");
  cmd->add_flag("--no-standardize", o.no_standardize,
                "skip dividing responses by their sample sd");
  cmd->set_config("--config", "", "flat key=value config file; flags override");
}

std::vector<double> make_grid(const CommonOpts& o, double range) {
  if (o.grid_min > 0 && o.grid_max > o.grid_min) {
    std::vector<double> g(o.grid_size);
    if (o.grid_size == 1) {
      g[0] = std::sqrt(o.grid_min * o.grid_max);
      return g;
    }
    const double step = (std::log(o.grid_max) - std::log(o.grid_min)) / (o.grid_size - 1);
    for (int i = 0; i < o.grid_size; ++i) g[i] = std::exp(std::log(o.grid_min) + step * i);
    return g;
  }
  return hgp::default_rho_grid(range, o.grid_size);
}

json timings_json(const hgp::PhaseTimings& t) {
  return json{{"setup_s", t.setup_s},
              {"sampling_s", t.sampling_s},
              {"prediction_s", t.prediction_s}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw hgp::IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// Deterministic holdout split: shuffle by seed, take ceil(h*n).
void split_holdout(int n, double holdout, std::uint64_t seed, std::vector<int>& train,
                   std::vector<int>& held) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  hgp::Rng rng(seed ^ 0x5deece66dull);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform() * (i + 1));
    std::swap(idx[i], idx[std::min(j, i)]);
  }
  const int nh = holdout > 0 ? static_cast<int>(std::ceil(holdout * n)) : 0;
  held.assign(idx.begin(), idx.begin() + nh);
  train.assign(idx.begin() + nh, idx.end());
  if (train.empty()) throw hgp::InvalidArgument("holdout leaves no training data");
}

int run_fit(const CommonOpts& o) {
  const hgp::CsvData data = hgp::read_csv(o.data_path);
  if (data.X.cols() != 1) {
    throw hgp::InvalidArgument("fit handles 1-D inputs; use fit-tensor for d > 1");
  }
  fs::create_directories(o.out_dir);

  std::vector<int> train_idx, held_idx;
  split_holdout(static_cast<int>(data.X.rows()), o.holdout, o.seed, train_idx, held_idx);

  Eigen::MatrixXd Xtr(train_idx.size(), 1);
  Eigen::VectorXd ytr(train_idx.size());
  for (std::size_t i = 0; i < train_idx.size(); ++i) {
    Xtr(i, 0) = data.X(train_idx[i], 0);
    ytr[i] = data.y[train_idx[i]];
  }
  const hgp::Dataset ds = hgp::collapse_duplicates(Xtr, ytr);
  const double range = ds.points.col(0).maxCoeff() - ds.points.col(0).minCoeff();

  hgp::PriorSpec priors;
  priors.a1 = o.a1;
  priors.b1 = o.b1;
  priors.a2 = o.a2;
  priors.b2 = o.b2;
  priors.rho_grid = make_grid(o, range > 0 ? range : 1.0);

  hgp::GibbsOptions opt;
  opt.eps = o.eps;
  opt.leaf_size = o.leaf_size;
  opt.iters = o.iters;
  opt.burn_in = o.burn_in;
  opt.thin = o.thin;
  opt.seed = o.seed;
  opt.store_f = o.store_f;
  opt.dup_precision_power = o.dup_power;
  opt.standardize = !o.no_standardize;

  Eigen::MatrixXd pred_pts;
  Eigen::VectorXd held_y;
  if (!held_idx.empty()) {
    pred_pts.resize(held_idx.size(), 1);
    held_y.resize(held_idx.size());
    for (std::size_t i = 0; i < held_idx.size(); ++i) {
      pred_pts(i, 0) = data.X(held_idx[i], 0);
      held_y[i] = data.y[held_idx[i]];
    }
  } else if (o.predict_grid > 0) {
    pred_pts.resize(o.predict_grid, 1);
    const double lo = ds.points.col(0).minCoeff();
    const double step = o.predict_grid > 1 ? range / (o.predict_grid - 1) : 0.0;
    for (int i = 0; i < o.predict_grid; ++i) pred_pts(i, 0) = lo + step * i;
  }
  opt.predict_points = pred_pts;

  std::vector<hgp::GibbsChain> chains(std::max(o.chains, 1));
  if (o.chains <= 1) {
    chains[0] = hgp::run_gibbs(ds, priors, opt);
  } else {
    std::vector<std::thread> workers;
    for (int c = 0; c < o.chains; ++c) {
      workers.emplace_back([&, c]() {
        hgp::GibbsOptions copt = opt;
        copt.seed = opt.seed + 1000003ull * c;
        chains[c] = hgp::run_gibbs(ds, priors, copt);
      });
    }
    for (auto& w : workers) w.join();
  }

  // Pool retained draws across chains for predictions and summaries.
  long total_rows = 0;
  for (const auto& c : chains) total_rows += c.retained();
  Eigen::MatrixXd pooled(total_rows, pred_pts.rows());
  Eigen::VectorXd pooled_tau(total_rows);
  long at = 0;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& ch = chains[c];
    if (pred_pts.rows() > 0) pooled.middleRows(at, ch.retained()) = ch.pred_draws;
    pooled_tau.segment(at, ch.retained()) = ch.tau;
    at += ch.retained();
    const std::string name =
        chains.size() == 1 ? "chain.csv" : "chain_" + std::to_string(c) + ".csv";
    hgp::write_chain_csv((fs::path(o.out_dir) / name).string(), ch);
  }

  json summary;
  summary["mode"] = "fit";
  summary["n"] = data.X.rows();
  summary["n_train"] = static_cast<long>(train_idx.size());
  summary["n_unique"] = ds.size();
  summary["seed"] = o.seed;
  summary["generator"] = chains[0].generator;
  summary["eps"] = o.eps;
  summary["leaf_size"] = o.leaf_size;
  summary["priors"] = {{"a1", o.a1}, {"b1", o.b1}, {"a2", o.a2}, {"b2", o.b2}};
  summary["grid"] = {{"size", priors.rho_grid.size()},
                     {"min", priors.rho_grid.front()},
                     {"max", priors.rho_grid.back()}};
  summary["retained"] = total_rows;
  summary["tau_hat"] = pooled_tau.mean();

  if (pred_pts.rows() > 0) {
    hgp::write_predictions_csv((fs::path(o.out_dir) / "predictions.csv").string(),
                               pred_pts, pooled);
    Eigen::VectorXd lower, upper;
    hgp::pointwise_interval(pooled, lower, upper);
    summary["ci_area"] = (upper - lower).mean() * range;
    if (held_y.size() > 0) {
      Eigen::VectorXd mean(pred_pts.rows());
      for (Eigen::Index j = 0; j < pooled.cols(); ++j) mean[j] = pooled.col(j).mean();
      summary["mspe_holdout"] = (mean - held_y).squaredNorm() / held_y.size();
      summary["n_holdout"] = held_y.size();
    }
  }
  summary["timings"] = timings_json(chains[0].timings);

  json meta;
  meta["seed"] = o.seed;
  meta["generator"] = chains[0].generator;
  meta["eps"] = o.eps;
  meta["leaf_size"] = o.leaf_size;
  meta["priors"] = summary["priors"];
  meta["grid"] = summary["grid"];
  meta["y_scale"] = chains[0].y_scale;
  meta["timings"] = timings_json(chains[0].timings);
  write_json(fs::path(o.out_dir) / "chain_meta.json", meta);
  write_json(fs::path(o.out_dir) / "summary.json", summary);
  std::cout << "fit: wrote " << o.out_dir << " (retained " << total_rows << " draws)\n";
  return 0;
}

int run_fit_tensor(const CommonOpts& o, int bases, int eval_grid) {
  const hgp::CsvData data = hgp::read_csv(o.data_path);
  const int d = static_cast<int>(data.X.cols());
  fs::create_directories(o.out_dir);

  std::vector<int> train_idx, held_idx;
  split_holdout(static_cast<int>(data.X.rows()), o.holdout, o.seed, train_idx, held_idx);
  Eigen::MatrixXd Xtr(train_idx.size(), d);
  Eigen::VectorXd ytr(train_idx.size());
  for (std::size_t i = 0; i < train_idx.size(); ++i) {
    Xtr.row(i) = data.X.row(train_idx[i]);
    ytr[i] = data.y[train_idx[i]];
  }

  hgp::TensorOptions opt;
  opt.n_bases = bases;
  opt.eps = o.eps;
  opt.leaf_size = o.leaf_size;
  opt.iters = o.iters;
  opt.burn_in = o.burn_in;
  opt.thin = o.thin;
  opt.seed = o.seed;
  opt.a1 = o.a1;
  opt.b1 = o.b1;
  opt.rho_grid_size = o.grid_size;
  opt.standardize = !o.no_standardize;

  Eigen::MatrixXd pred_pts;
  Eigen::VectorXd held_y;
  if (!held_idx.empty()) {
    pred_pts.resize(held_idx.size(), d);
    held_y.resize(held_idx.size());
    for (std::size_t i = 0; i < held_idx.size(); ++i) {
      pred_pts.row(i) = data.X.row(held_idx[i]);
      held_y[i] = data.y[held_idx[i]];
    }
  } else if (eval_grid > 0) {
    // Product grid over per-dimension data ranges.
    long total = 1;
    for (int h = 0; h < d; ++h) total *= eval_grid;
    pred_pts.resize(total, d);
    Eigen::VectorXd lo(d), step(d);
    for (int h = 0; h < d; ++h) {
      lo[h] = Xtr.col(h).minCoeff();
      const double range = Xtr.col(h).maxCoeff() - lo[h];
      step[h] = eval_grid > 1 ? range / (eval_grid - 1) : 0.0;
    }
    for (long i = 0; i < total; ++i) {
      long rem = i;
      for (int h = 0; h < d; ++h) {
        pred_pts(i, h) = lo[h] + step[h] * (rem % eval_grid);
        rem /= eval_grid;
      }
    }
  }
  opt.predict_points = pred_pts;

  const hgp::TensorChain chain = hgp::run_tensor_gibbs(Xtr, ytr, opt);
  hgp::write_tensor_chain_csv((fs::path(o.out_dir) / "chain.csv").string(), chain);

  json summary;
  summary["mode"] = "fit-tensor";
  summary["n"] = data.X.rows();
  summary["d"] = d;
  summary["bases"] = bases;
  summary["seed"] = o.seed;
  summary["generator"] = chain.generator;
  summary["retained"] = chain.retained();
  summary["tau_hat"] = chain.tau.mean();
  if (pred_pts.rows() > 0) {
    hgp::write_predictions_csv((fs::path(o.out_dir) / "surface.csv").string(), pred_pts,
                               chain.surface_draws);
    if (held_y.size() > 0) {
      Eigen::VectorXd mean(pred_pts.rows());
      for (Eigen::Index j = 0; j < chain.surface_draws.cols(); ++j) {
        mean[j] = chain.surface_draws.col(j).mean();
      }
      summary["mspe_holdout"] = (mean - held_y).squaredNorm() / held_y.size();
      summary["n_holdout"] = held_y.size();
    }
  }
  summary["timings"] = timings_json(chain.timings);
  write_json(fs::path(o.out_dir) / "summary.json", summary);
  std::cout << "fit-tensor: wrote " << o.out_dir << " (retained " << chain.retained()
            << " draws)\n";
  return 0;
}

// Dense-oracle sweep: empirical posterior KL against the computable bound.
int run_validate(const std::string& out_dir, std::vector<int> ns, std::vector<double> epss,
                 std::uint64_t seed, int leaf_size) {
  fs::create_directories(out_dir);
  const fs::path report_path = fs::path(out_dir) / "validate.csv";
  std::ofstream report(report_path);
  if (!report) throw hgp::IoError("cannot write " + report_path.string());
  report << "n,eps,kl_empirical,bound_i,bound_ii,bound_iii,bound_total,pass\n";

  // A well-conditioned configuration: moderate correlation plus a substantial
  // nugget keeps sigma_min(K) macroscopic so the admissibility window is wide.
  const hgp::KernelParams params{1.0, 30.0, 0.5};
  const double tau = 1.0;
  bool all_pass = true;

  for (int n : ns) {
    hgp::Rng rng(seed + n);
    Eigen::MatrixXd pts(n, 1);
    for (int i = 0; i < n; ++i) pts(i, 0) = (i + 0.5) / n;
    const Eigen::MatrixXd K = hgp::build_dense_covariance(pts, params);
    Eigen::MatrixXd M = tau * K;
    M.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> lltK(K);
    const Eigen::VectorXd y = lltK.matrixL() * rng.normal_vec(n);
    const hgp::DensePosterior exact = hgp::make_dense_posterior(K, tau, y);

    for (double eps : epss) {
      const hgp::BoundInputs inputs = hgp::compute_bound_inputs(K, M, eps, tau, y);
      bool admissible = true;
      try {
        inputs.check_admissible();
      } catch (const hgp::InvalidArgument&) {
        admissible = false;
      }
      if (!admissible) {
        report << n << ',' << hgp::format_double(eps) << ",,,,,,skipped\n";
        continue;
      }
      const hgp::KlBoundParts bound = hgp::kl_bound(inputs);
      const hgp::HodlrMatrix Ktree = hgp::HodlrMatrix::assemble(pts, params, eps, leaf_size);
      const Eigen::MatrixXd Kt = Ktree.to_dense();
      Eigen::MatrixXd Mt = tau * Kt;
      Mt.diagonal().array() += 1.0;
      Eigen::LLT<Eigen::MatrixXd> lltMt(Mt);
      Eigen::MatrixXd sigma_q = lltMt.solve(Kt);
      sigma_q = 0.5 * (sigma_q + sigma_q.transpose()).eval();
      const Eigen::VectorXd mu_q = tau * (sigma_q * y);
      const double kl = hgp::gaussian_kl(exact.mu_f, exact.sigma_f, mu_q, sigma_q);
      const bool pass = kl <= bound.total;
      all_pass = all_pass && pass;
      report << n << ',' << hgp::format_double(eps) << ',' << hgp::format_double(kl) << ','
             << hgp::format_double(bound.part_i) << ',' << hgp::format_double(bound.part_ii)
             << ',' << hgp::format_double(bound.part_iii) << ','
             << hgp::format_double(bound.total) << ',' << (pass ? "pass" : "fail") << "\n";
    }
  }
  report.close();
  std::cout << "validate: wrote " << report_path.string()
            << (all_pass ? " (all rows pass)" : " (BOUND VIOLATED)") << "\n";
  return all_pass ? 0 : 1;
}

int run_bench(const std::string& out_dir, std::vector<long> sizes, long bench_iters,
              int grid_size, std::uint64_t seed, double eps, int leaf_size) {
  fs::create_directories(out_dir);
  const fs::path path = fs::path(out_dir) / "bench.csv";
  std::ofstream out(path);
  if (!out) throw hgp::IoError("cannot write " + path.string());
  out << "n,setup_s,sampling_s,per_iteration_s\n";

  std::vector<double> logn, logt;
  for (long n : sizes) {
    hgp::GpSimConfig cfg;
    cfg.n = static_cast<int>(n);
    cfg.n_test = 1;
    cfg.rho = 1.0;
    cfg.tau = 2.0;
    cfg.seed = seed;
    const hgp::GpSim sim = simulate_gp_1d(cfg);
    Eigen::MatrixXd X(n, 1);
    X.col(0) = sim.x_train;
    const hgp::Dataset ds = hgp::collapse_duplicates(X, sim.y_train);

    hgp::PriorSpec priors;
    priors.rho_grid = hgp::default_rho_grid(
        ds.points.col(0).maxCoeff() - ds.points.col(0).minCoeff(), grid_size);
    hgp::GibbsOptions opt;
    opt.eps = eps;
    opt.leaf_size = leaf_size;
    opt.iters = bench_iters;
    opt.burn_in = 0;
    opt.thin = bench_iters;  // keep a single draw; timing is what matters
    opt.seed = seed;
    const hgp::GibbsChain chain = hgp::run_gibbs(ds, priors, opt);
    const double per_iter = chain.timings.sampling_s / bench_iters;
    out << n << ',' << hgp::format_double(chain.timings.setup_s) << ','
        << hgp::format_double(chain.timings.sampling_s) << ','
        << hgp::format_double(per_iter) << "\n";
    std::cout << "bench n=" << n << ": setup " << chain.timings.setup_s << " s, "
              << bench_iters << " iterations " << chain.timings.sampling_s << " s\n";
    logn.push_back(std::log(static_cast<double>(n)));
    logt.push_back(std::log(std::max(chain.timings.sampling_s, 1e-9)));
  }

  if (sizes.size() < 2) {
    std::cout << "bench: slope n/a (single size)\n";
    out << "# slope,n/a\n";
    return 0;
  }
  const double mx = std::accumulate(logn.begin(), logn.end(), 0.0) / logn.size();
  const double my = std::accumulate(logt.begin(), logt.end(), 0.0) / logt.size();
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < logn.size(); ++i) {
    sxx += (logn[i] - mx) * (logn[i] - mx);
    sxy += (logn[i] - mx) * (logt[i] - my);
  }
  const double slope = sxy / sxx;
  out << "# slope," << hgp::format_double(slope) << "\n";
  std::cout << "bench: sampling-phase log-log slope " << slope << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-process regression with hierarchical-matrix posterior sampling"};
  app.require_subcommand(1);

  CommonOpts fit_opts;
  auto* fit = app.add_subcommand("fit", "1-D GP regression on a CSV");
  add_common(fit, fit_opts, true);

  CommonOpts tensor_opts;
  int bases = 1, eval_grid = 25;
  auto* fit_tensor =
      app.add_subcommand("fit-tensor", "d-D tensor-product surface regression");
  add_common(fit_tensor, tensor_opts, true);
  fit_tensor->add_option("--bases", bases, "number of additive tensor bases");
  fit_tensor->add_option("--eval-grid", eval_grid,
                         "per-dimension surface evaluation grid (no holdout)");

  std::string val_out = "out";
  std::vector<int> val_ns{50, 100, 200};
  std::vector<double> val_eps{1e-4, 1e-6, 1e-8, 1e-10, 1e-12};
  std::uint64_t val_seed = 1;
  int val_leaf = 32;
  auto* validate =
      app.add_subcommand("validate", "empirical posterior-KL check against the bound");
  validate->add_option("--out", val_out, "output directory");
  validate->add_option("--n", val_ns, "matrix sizes");
  validate->add_option("--eps", val_eps, "tolerances to sweep");
  validate->add_option("--seed", val_seed, "RNG seed");
  validate->add_option("--leaf-size,-B", val_leaf, "maximum diagonal block size");

  std::string bench_out = "out";
  std::vector<long> bench_sizes{1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072};
  long bench_iters = 100;
  int bench_grid = 5;
  std::uint64_t bench_seed = 1;
  double bench_eps = 1e-8;
  int bench_leaf = 64;
  auto* bench = app.add_subcommand("bench", "setup/sampling wall-clock over sizes");
  bench->add_option("--out", bench_out, "output directory");
  bench->add_option("--sizes", bench_sizes, "problem sizes");
  bench->add_option("--bench-iters", bench_iters, "sampling iterations per size");
  bench->add_option("--grid-size", bench_grid, "length-scale grid size");
  bench->add_option("--seed", bench_seed, "RNG seed");
  bench->add_option("--eps", bench_eps, "construction tolerance");
  bench->add_option("--leaf-size,-B", bench_leaf, "maximum diagonal block size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return run_fit(fit_opts);
    if (fit_tensor->parsed()) return run_fit_tensor(tensor_opts, bases, eval_grid);
    if (validate->parsed()) return run_validate(val_out, val_ns, val_eps, val_seed, val_leaf);
    if (bench->parsed())
      return run_bench(bench_out, bench_sizes, bench_iters, bench_grid, bench_seed,
                       bench_eps, bench_leaf);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
