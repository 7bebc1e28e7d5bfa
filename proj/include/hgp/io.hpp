#pragma once

#include <string>

#include <Eigen/Core>

#include "hgp/common.hpp"
#include "hgp/sampler.hpp"
#include "hgp/tensor.hpp"

namespace hgp {

struct CsvData {
  Eigen::MatrixXd X;  // n x d
  Eigen::VectorXd y;
};

/// Reads `x1,...,xd,y` CSV (header required, decimal point, UTF-8).
CsvData read_csv(const std::string& path);

/// Shortest round-trippable decimal form of a double.
std::string format_double(double v);

/// chain.csv columns: iter,tau,sigma_f_sq,rho[,f_1..f_U].
void write_chain_csv(const std::string& path, const GibbsChain& chain);

/// predictions.csv columns: x1..xd,mean,lower95,upper95 from per-draw samples.
void write_predictions_csv(const std::string& path, const Eigen::MatrixXd& points,
                           const Eigen::MatrixXd& draws);

/// Tensor chain CSV: iter,tau,beta_1..beta_B.
void write_tensor_chain_csv(const std::string& path, const TensorChain& chain);

/// Pointwise lower/upper 2.5%/97.5% empirical quantiles per column.
void pointwise_interval(const Eigen::MatrixXd& draws, Eigen::VectorXd& lower,
                        Eigen::VectorXd& upper);

double quantile(Eigen::VectorXd values, double q);  // by value: sorts a copy

}  // namespace hgp
