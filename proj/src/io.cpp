#include "hgp/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace hgp {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    std::size_t lead = 0;
    while (lead < field.size() && field[lead] == ' ') ++lead;
    out.push_back(field.substr(lead));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

CsvData read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  const auto header = split_line(line);
  if (header.size() < 2) {
    throw IoError(path + ": header must be x1,...,xd,y (got " +
                  std::to_string(header.size()) + " columns)");
  }
  const int d = static_cast<int>(header.size()) - 1;
  for (int j = 0; j < d; ++j) {
    const std::string want = "x" + std::to_string(j + 1);
    if (header[j] != want) {
      throw IoError(path + ": header column " + std::to_string(j + 1) + " must be '" +
                    want + "', got '" + header[j] + "'");
    }
  }
  if (header.back() != "y") {
    throw IoError(path + ": last header column must be 'y', got '" + header.back() + "'");
  }

  std::vector<std::vector<double>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto fields = split_line(line);
    if (static_cast<int>(fields.size()) != d + 1) {
      throw IoError(path + ": row " + std::to_string(line_no) + " has " +
                    std::to_string(fields.size()) + " columns, expected " +
                    std::to_string(d + 1));
    }
    std::vector<double> vals(d + 1);
    for (int j = 0; j <= d; ++j) {
      const auto& s = fields[j];
      const char* b = s.data();
      const char* e = b + s.size();
      auto [p, ec] = std::from_chars(b, e, vals[j]);
      if (ec != std::errc{} || p != e) {
        throw IoError(path + ": row " + std::to_string(line_no) + ", column " +
                      std::to_string(j + 1) + ": cannot parse '" + s + "' as a number");
      }
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw IoError(path + ": no data rows");

  CsvData out;
  out.X.resize(rows.size(), d);
  out.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < d; ++j) out.X(i, j) = rows[i][j];
    out.y[i] = rows[i][d];
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, len);
}

void write_chain_csv(const std::string& path, const GibbsChain& chain) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iter,tau,sigma_f_sq,rho";
  const bool with_f = chain.f_draws.size() > 0;
  if (with_f) {
    for (Eigen::Index j = 0; j < chain.f_draws.cols(); ++j) out << ",f_" << (j + 1);
  }
  out << "\n";
  for (long i = 0; i < chain.retained(); ++i) {
    out << chain.iteration[i] << ',' << format_double(chain.tau[i]) << ','
        << format_double(chain.sigma_f_sq[i]) << ',' << format_double(chain.rho[i]);
    if (with_f) {
      for (Eigen::Index j = 0; j < chain.f_draws.cols(); ++j) {
        out << ',' << format_double(chain.f_draws(i, j));
      }
    }
    out << "\n";
  }
}

double quantile(Eigen::VectorXd values, double q) {
  if (values.size() == 0) throw InvalidArgument("quantile: empty input");
  std::sort(values.data(), values.data() + values.size());
  const double pos = q * (values.size() - 1);
  const auto lo = static_cast<Eigen::Index>(pos);
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double w = pos - lo;
  return (1.0 - w) * values[lo] + w * values[hi];
}

void pointwise_interval(const Eigen::MatrixXd& draws, Eigen::VectorXd& lower,
                        Eigen::VectorXd& upper) {
  lower.resize(draws.cols());
  upper.resize(draws.cols());
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    lower[j] = quantile(draws.col(j), 0.025);
    upper[j] = quantile(draws.col(j), 0.975);
  }
}

void write_predictions_csv(const std::string& path, const Eigen::MatrixXd& points,
                           const Eigen::MatrixXd& draws) {
  if (points.rows() != draws.cols()) {
    throw InvalidArgument("write_predictions_csv: point/draw count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (Eigen::Index j = 0; j < points.cols(); ++j) out << 'x' << (j + 1) << ',';
  out << "mean,lower95,upper95\n";
  Eigen::VectorXd lower, upper;
  pointwise_interval(draws, lower, upper);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      out << format_double(points(i, j)) << ',';
    }
    out << format_double(draws.col(i).mean()) << ',' << format_double(lower[i]) << ','
        << format_double(upper[i]) << "\n";
  }
}

void write_tensor_chain_csv(const std::string& path, const TensorChain& chain) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iter,tau";
  for (Eigen::Index b = 0; b < chain.beta.cols(); ++b) out << ",beta_" << (b + 1);
  out << "\n";
  for (long i = 0; i < chain.retained(); ++i) {
    out << (i + 1) << ',' << format_double(chain.tau[i]);
    for (Eigen::Index b = 0; b < chain.beta.cols(); ++b) {
      out << ',' << format_double(chain.beta(i, b));
    }
    out << "\n";
  }
}

}  // namespace hgp
