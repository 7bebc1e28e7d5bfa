#include "hgp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hgp/common.hpp"

namespace hgp {

double Rng::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw InvalidArgument("gamma: shape and rate must be positive");
  }
  if (shape < 1.0) {
    const double x = gamma(shape + 1.0, rate);
    const double u = uniform();
    return x * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v / rate;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

double log_sum_exp(const std::vector<double>& logw) {
  if (logw.empty()) throw InvalidArgument("log_sum_exp: empty input");
  const double m = *std::max_element(logw.begin(), logw.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double w : logw) s += std::exp(w - m);
  return m + std::log(s);
}

int categorical_from_log_weights(const std::vector<double>& logw, Rng& rng) {
  const double lse = log_sum_exp(logw);
  if (!std::isfinite(lse)) {
    throw InvalidArgument("categorical_from_log_weights: all weights are -inf or nan");
  }
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    cum += std::exp(logw[i] - lse);
    if (u <= cum) return static_cast<int>(i);
  }
  return static_cast<int>(logw.size()) - 1;  // guard rounding
}

}  // namespace hgp
