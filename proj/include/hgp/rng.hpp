#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace hgp {

/// Random stream with distribution code owned by this library so that a
/// seed pins the entire draw sequence bit-for-bit, independent of the
/// standard library implementation. Two samplers sharing a seed and calling
/// the same sequence of methods consume identical variates, which is what
/// makes lockstep chain comparisons meaningful.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  static constexpr const char* generator_name() { return "mt19937_64"; }
  std::uint64_t seed() const { return seed_; }

  /// Uniform on (0,1), 53-bit resolution, never exactly 0 or 1.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  /// Standard normal via the polar method (one spare cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  Eigen::VectorXd normal_vec(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  /// Gamma(shape, rate) via Marsaglia-Tsang; shape<1 handled by boosting.
  /// The rejection path depends on the shape only, so two chains with equal
  /// shapes consume the same number of variates regardless of their rates.
  double gamma(double shape, double rate);

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// log(sum(exp(logw))) guarded against overflow.
double log_sum_exp(const std::vector<double>& logw);

/// Categorical draw from unnormalized log-weights; consumes one uniform.
int categorical_from_log_weights(const std::vector<double>& logw, Rng& rng);

}  // namespace hgp
