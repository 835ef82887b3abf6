#include "doctest.h"

#include <cmath>
#include <random>

#include "rbdsde/regression.hpp"

using namespace rbdsde::regression;

namespace {

Mat uniform_points(std::size_t M, Eigen::Index d, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Mat x(static_cast<Eigen::Index>(M), d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(g);
  return x;
}

BasisConfig polynomial(int degree) {
  BasisConfig b;
  b.kind = BasisConfig::Kind::kPolynomial;
  b.degree = degree;
  return b;
}

}  // namespace

TEST_CASE("monomial exponents in graded order") {
  const auto e = monomial_exponents(2, 2);
  REQUIRE(e.size() == 6);
  CHECK(e[0] == std::vector<int>{0, 0});
  for (std::size_t i = 1; i < e.size(); ++i) CHECK(e[i - 1][0] + e[i - 1][1] <= e[i][0] + e[i][1]);
  CHECK(monomial_exponents(3, 3).size() == 20);
}

TEST_CASE("constant targets are reproduced by both bases") {
  const Mat x = uniform_points(2000, 2, 1);
  const Mat y = Mat::Constant(2000, 1, 3.25);
  for (const auto& basis : {polynomial(2), BasisConfig{}}) {
    const auto fn = fit(basis, x, y);
    CHECK(fn.evaluate(Vec::Constant(2, 0.3))(0) == doctest::Approx(3.25).epsilon(1e-10));
  }
}

TEST_CASE("exact linear targets") {
  const Mat x = uniform_points(500, 3, 2);
  Mat y(500, 2);
  y.col(0) = 1.0 + 2.0 * x.col(0).array() - x.col(2).array();
  y.col(1) = -0.5 * x.col(1);
  const auto fn = fit(polynomial(1), x, y);
  const Vec q = (Vec(3) << 0.2, -0.4, 0.7).finished();
  const Vec v = fn.evaluate(q);
  CHECK(v(0) == doctest::Approx(1.0 + 0.4 - 0.7).epsilon(1e-10));
  CHECK(v(1) == doctest::Approx(0.2).epsilon(1e-10));
  CHECK_FALSE(fn.ridge());
  const auto local = fit(BasisConfig{}, x, y);
  CHECK(local.evaluate(q)(0) == doctest::Approx(0.7).epsilon(1e-8));
}

TEST_CASE("residuals are orthogonal to the basis") {
  const Mat x = uniform_points(3000, 1, 3);
  Mat y(3000, 1);
  std::mt19937_64 g(4);
  std::normal_distribution<double> n;
  for (Eigen::Index i = 0; i < 3000; ++i) y(i, 0) = std::exp(x(i, 0)) + 0.3 * n(g);
  const auto fn = fit(polynomial(3), x, y);
  const Mat r = y - fn.evaluate_batch(x);
  for (int p = 0; p <= 3; ++p) CHECK(std::abs((r.col(0).array() * x.col(0).array().pow(p)).mean()) < 1e-10);
}

TEST_CASE("refitting fitted values is idempotent") {
  const Mat x = uniform_points(2500, 2, 5);
  Mat y(2500, 1);
  y.col(0) = (x.col(0).array() * 3.0).sin() + x.col(1).array().square();
  for (const auto& basis : {polynomial(3), BasisConfig{}}) {
    const auto first = fit(basis, x, y);
    const Mat yhat = first.evaluate_batch(x);
    const auto second = fit(basis, x, yhat);
    CHECK((second.evaluate_batch(x) - yhat).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("local basis tracks a smooth nonlinear function") {
  const Mat x = uniform_points(40000, 1, 6, -3.0, 3.0);
  const Mat y = x.array().sin().matrix();
  const auto fn = fit(BasisConfig{}, x, y);
  double worst = 0;
  for (double q = -2.5; q <= 2.5; q += 0.05) worst = std::max(worst, std::abs(fn.evaluate(Vec::Constant(1, q))(0) - std::sin(q)));
  CHECK(worst < 0.02);
  // A global quadratic cannot follow sin on [-3, 3].
  const auto poly = fit(polynomial(2), x, y);
  CHECK(std::abs(poly.evaluate(Vec::Constant(1, 1.5))(0) - std::sin(1.5)) > 0.1);
}

TEST_CASE("rank deficiency falls back to ridge") {
  Mat x = uniform_points(400, 2, 7);
  x.col(1) = x.col(0);
  const Mat y = x.col(0) * 2.0;
  const auto fn = fit(polynomial(1), x, y);
  CHECK(fn.ridge());
  CHECK(fn.evaluate(Vec::Constant(2, 0.5))(0) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("prediction variance shrinks with the sample size") {
  auto var_at = [](std::size_t M) {
    const Mat x = uniform_points(M, 1, 8);
    std::mt19937_64 g(9);
    std::normal_distribution<double> n;
    Mat y(static_cast<Eigen::Index>(M), 1);
    for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, 0) = x(i, 0) + n(g);
    const auto fn = fit(polynomial(1), x, y);
    CHECK(fn.leverage(Vec::Zero(1)) > 0.0);
    return fn.prediction_variance(Vec::Zero(1))(0);
  };
  const double small = var_at(1000), large = var_at(16000);
  CHECK(small / large == doctest::Approx(16.0).epsilon(0.25));
  CHECK(small == doctest::Approx(1.0 / 1000).epsilon(0.2));
}
