#include <doctest.h>

#include <Eigen/Core>

#include "hgp/lowrank.hpp"
#include "hgp/rng.hpp"

using namespace hgp;

namespace {

// Dense accessor wrapper.
auto dense_acc(const Eigen::MatrixXd& A) {
  return [&A](int i, int j) { return A(i, j); };
}

Eigen::MatrixXd se_block(int m, int n, double rho, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd xs(m + n);
  for (int i = 0; i < m + n; ++i) xs[i] = rng.uniform();
  std::sort(xs.data(), xs.data() + m + n);
  Eigen::MatrixXd A(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const double d = xs[i] - xs[m + j];
      A(i, j) = std::exp(-rho * d * d);
    }
  return A;
}

}  // namespace

TEST_CASE("factor_block zero block has rank 0") {
  const Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(10, 10);
  const LowRankFactor f = factor_block(dense_acc(Z), 10, 10, 1e-8);
  CHECK(f.rank() == 0);
  CHECK(f.achieved_tol == 0.0);
  CHECK(estimate_max_error(f, dense_acc(Z), 10, 10, 8) == 0.0);
}

TEST_CASE("factor_block recovers an exact rank-1 block") {
  Rng rng(2);
  // Above the dense-fallback threshold so the ACA path is exercised.
  const int m = 80, n = 90;
  const Eigen::VectorXd u = rng.normal_vec(m), v = rng.normal_vec(n);
  const Eigen::MatrixXd A = u * v.transpose();
  const LowRankFactor f = factor_block(dense_acc(A), m, n, 1e-12);
  CHECK(f.rank() == 1);
  CHECK((A - f.U * f.V.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("factor_block reaches the requested tolerance exhaustively") {
  for (double eps : {1e-4, 1e-8, 1e-12}) {
    for (std::uint64_t seed : {1ull, 2ull}) {
      const Eigen::MatrixXd A = se_block(120, 110, 4.0, seed);
      const LowRankFactor f = factor_block(dense_acc(A), 120, 110, eps);
      const double err = (A - f.U * f.V.transpose()).cwiseAbs().maxCoeff();
      CHECK(err <= eps);
      CHECK(f.rank() < 40);
    }
  }
}

TEST_CASE("factor_block rank is monotone in eps over a block corpus") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Eigen::MatrixXd A = se_block(100, 100, 8.0, seed);
    int prev = 0;
    for (double eps : {1e-4, 1e-6, 1e-8, 1e-10, 1e-12}) {
      const LowRankFactor f = factor_block(dense_acc(A), 100, 100, eps);
      CHECK(f.rank() >= prev);
      prev = f.rank();
    }
  }
}

TEST_CASE("factor storage is (m+n)*r reals") {
  const Eigen::MatrixXd A = se_block(96, 72, 4.0, 3);
  const LowRankFactor f = factor_block(dense_acc(A), 96, 72, 1e-8);
  CHECK(f.U.size() + f.V.size() == (96 + 72) * f.rank());
}

TEST_CASE("scaling equivariance: factor(c*A, c*eps) == c*factor(A, eps)") {
  const Eigen::MatrixXd A = se_block(90, 90, 4.0, 5);
  const double c = 37.5;
  const Eigen::MatrixXd B = c * A;
  const LowRankFactor fa = factor_block(dense_acc(A), 90, 90, 1e-9);
  const LowRankFactor fb = factor_block(dense_acc(B), 90, 90, c * 1e-9);
  CHECK(fa.rank() == fb.rank());
  const Eigen::MatrixXd ra = fa.U * fa.V.transpose();
  const Eigen::MatrixXd rb = fb.U * fb.V.transpose();
  CHECK((c * ra - rb).cwiseAbs().maxCoeff() < 1e-10 * c);
}

TEST_CASE("dense fallback handles small blocks at tolerance") {
  const Eigen::MatrixXd A = se_block(50, 50, 4.0, 7);
  const LowRankFactor f = factor_block(dense_acc(A), 50, 50, 1e-8);
  CHECK(f.exhaustive);
  CHECK((A - f.U * f.V.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(f.achieved_tol <= 1e-8);
}

TEST_CASE("reference ranks on the documented example block") {
  // n=200 sorted uniforms on (0,1), k = exp(-4 (x-x')^2): the top-level
  // 100x100 off-diagonal block compresses to rank about 7 at 1e-8 and the
  // 50x50 second-level blocks to about 5.
  Rng rng(42);
  Eigen::VectorXd xs(200);
  for (int i = 0; i < 200; ++i) xs[i] = rng.uniform();
  std::sort(xs.data(), xs.data() + 200);
  auto block = [&](int r0, int c0) {
    return [&xs, r0, c0](int i, int j) {
      const double d = xs[r0 + i] - xs[c0 + j];
      return std::exp(-4.0 * d * d);
    };
  };
  const LowRankFactor top = factor_block(block(0, 100), 100, 100, 1e-8);
  CHECK(top.rank() >= 5);
  CHECK(top.rank() <= 9);
  const LowRankFactor second = factor_block(block(0, 50), 50, 50, 1e-8);
  CHECK(second.rank() >= 3);
  CHECK(second.rank() <= 7);
}

TEST_CASE("estimate_max_error bounds the documented example block") {
  const Eigen::MatrixXd A = se_block(100, 100, 4.0, 9);
  const LowRankFactor f = factor_block(dense_acc(A), 100, 100, 1e-8);
  const double est = estimate_max_error(f, dense_acc(A), 100, 100, 64);
  const double truth = (A - f.U * f.V.transpose()).cwiseAbs().maxCoeff();
  CHECK(est <= 1e-8);
  CHECK(truth <= 1e-8);
  CHECK(est <= truth + 1e-15);
}

TEST_CASE("estimate_max_error rejects bad probe count") {
  const Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(4, 4);
  const LowRankFactor f = factor_block(dense_acc(Z), 4, 4, 1e-8);
  CHECK_THROWS_AS(estimate_max_error(f, dense_acc(Z), 4, 4, 0), InvalidArgument);
}

TEST_CASE("full-rank fallback flags truncation") {
  // A random (incompressible) block cannot meet a tiny tolerance below full
  // rank; the factorization must cap at min(m,n) and flag it.
  Rng rng(17);
  Eigen::MatrixXd A(70, 65);
  for (int i = 0; i < 70; ++i)
    for (int j = 0; j < 65; ++j) A(i, j) = rng.normal();
  const LowRankFactor f = factor_block(dense_acc(A), 70, 65, 1e-300);
  CHECK(f.rank() == 65);
  CHECK(f.truncated);
  CHECK((A - f.U * f.V.transpose()).cwiseAbs().maxCoeff() < 1e-8);
}
