#include "arbhedge/errors.hpp"
#include "arbhedge/market_model.hpp"

#include <Eigen/QR>
#include <doctest.h>

#include <cmath>
#include <random>

using namespace arbhedge;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("min_norm_solve agrees with a complete orthogonal decomposition pseudo-inverse") {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<int> dim(1, 6);
  std::normal_distribution<double> n01;
  int cases = 0;
  for (int trial = 0; trial < 1500; ++trial) {
    const int d = dim(gen), k = dim(gen);
    const int r = std::uniform_int_distribution<int>(1, std::min(d, k))(gen);
    // Random rank-r matrix as a product of Gaussian factors.
    Matrix a = Matrix::NullaryExpr(d, r, [&] { return n01(gen); });
    Matrix b = Matrix::NullaryExpr(r, k, [&] { return n01(gen); });
    const Matrix sigma = a * b;
    const Vector rhs = Vector::NullaryExpr(d, [&] { return n01(gen); });

    const auto sol = min_norm_solve(sigma, rhs);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(sigma);
    cod.setThreshold(1e-10);
    const Vector ref = cod.pseudoInverse() * rhs;
    const double scale = std::max(1.0, ref.norm());
    // Skip nearly singular draws where both answers are ill-conditioned.
    Eigen::JacobiSVD<Matrix> svd(sigma);
    const auto& sv = svd.singularValues();
    if (sv(r - 1) < 1e-3 * sv(0)) continue;
    ++cases;
    CHECK((sol.theta - ref).norm() <= 1e-8 * scale);
    // Normal equations: sigma^T (sigma theta - rhs) = 0.
    CHECK((sigma.transpose() * (sigma * sol.theta - rhs)).norm() <= 1e-9 * scale * std::max(1.0, sigma.norm() * sigma.norm()));
    if (r == d) CHECK(sol.consistent);
  }
  CHECK(cases >= 1000);
}

TEST_CASE("min_norm_solve: identity and rank deficient range checks") {
  const Matrix eye = Matrix::Identity(3, 3);
  const Vector mu = vec({0.1, -0.2, 0.3});
  const auto sol = min_norm_solve(eye, mu);
  CHECK((sol.theta - mu).norm() == 0.0);
  CHECK(sol.consistent);

  Matrix zero = Matrix::Zero(1, 1);
  const auto bad = min_norm_solve(zero, vec({1.0}));
  CHECK_FALSE(bad.consistent);
}

TEST_CASE("two-driver market has theta = (0, 0)") {
  const auto model = MarketModel::two_driver(1.0, 1.0);
  const Vector th = markovian_mpr(model, 0.3, vec({1.7}));
  REQUIRE(th.size() == 2);
  CHECK(th(0) == 0.0);
  CHECK(th(1) == 0.0);
  CHECK(MprField(model).identically_zero());
}

TEST_CASE("Bessel drift MPR is 1 / (s - ct)") {
  for (double c : {0.0, 0.5, 2.0}) {
    const auto model = MarketModel::bessel_drift(c, 1.0, 1.0);
    const MprField field(model);
    for (double t : {0.0, 0.4, 0.9}) {
      for (double s : {c * t + 0.1, c * t + 1.0, c * t + 5.0}) {
        const double expected = 1.0 / (s - c * t);
        CHECK(markovian_mpr(model, t, vec({s}))(0) == doctest::Approx(expected).epsilon(1e-13));
        CHECK(field.theta_1d(t, s) == doctest::Approx(expected).epsilon(1e-15));
      }
    }
    CHECK_THROWS_AS(markovian_mpr(model, 0.5, vec({c * 0.5 - 0.01})), SupportError);
  }
}

TEST_CASE("sdf_increment deterministic cases") {
  const auto base = DeflatorState::unit();
  const auto same = sdf_increment(base, 0.0, 0.37, 0.01);
  CHECK(same.log_z == 0.0);
  const auto step = sdf_increment(base, 1.0, 0.0, 0.01);
  CHECK(step.log_z == doctest::Approx(-0.005).epsilon(1e-15));
  const auto vstep = sdf_increment(base, vec({1.0, 2.0}), vec({0.1, -0.2}), 0.01);
  CHECK(vstep.log_z == doctest::Approx(-(0.1 - 0.4) - 0.5 * 5.0 * 0.01).epsilon(1e-14));
}

TEST_CASE("validate_model probes") {
  SUBCASE("Bessel c = 0 at (0, 1)") {
    const auto rep = validate_model(MarketModel::bessel_drift(0.0, 1.0, 1.0), {{0.0, vec({1.0})}});
    REQUIRE(rep.probes.size() == 1);
    CHECK(rep.ok());
    CHECK(rep.probes[0].min_eig_diffusion == doctest::Approx(1.0));
    CHECK(rep.probes[0].mpr_residual == doctest::Approx(0.0));
  }
  SUBCASE("reciprocal Bessel diffusion s^4") {
    const auto rep = validate_model(MarketModel::reciprocal_bessel(1.0, 1.0), {{0.0, vec({1.0})}, {0.0, vec({2.0})}});
    CHECK(rep.ok());
    CHECK(rep.probes[0].min_eig_diffusion == doctest::Approx(1.0));
    CHECK(rep.probes[1].min_eig_diffusion == doctest::Approx(16.0));
  }
  SUBCASE("mu outside the range of sigma") {
    ModelCoefficients coef;
    coef.mu = [](double, const Vector&) { return Vector::Constant(1, 1.0); };
    coef.sigma = [](double, const Vector&) { return Matrix::Zero(1, 1); };
    const auto model = MarketModel::custom("inconsistent", 1, 1, coef, vec({1.0}), 1.0);
    const auto rep = validate_model(model, {{0.0, vec({1.0})}});
    CHECK(rep.mpr_inconsistent);
    CHECK_FALSE(rep.ok());
  }
  SUBCASE("outside support") {
    const auto rep = validate_model(MarketModel::bessel_drift(1.0, 1.0, 1.0), {{0.5, vec({0.2})}});
    CHECK(rep.outside_support);
    CHECK_FALSE(rep.ok());
  }
}

TEST_CASE("model catalogue") {
  CHECK(make_model("bessel_drift", {{"c", 0.5}}).bessel_c() == 0.5);
  CHECK(make_model("reciprocal_bessel", {}).kind() == ModelKind::reciprocal_bessel);
  CHECK_THROWS_AS(make_model("nope", {}), ConfigError);
  const auto g = make_model("gbm", {{"T", 2.0}}, {{"mu", {0.1, 0.0}}, {"sigma", {0.2, 0.0, 0.1, 0.3}}, {"S0", {1.0, 2.0}}});
  CHECK(g.dim() == 2);
  CHECK(g.drivers() == 2);
  CHECK(g.horizon() == 2.0);
  const auto b = MarketModel::bessel_drift(0.5, 1.0, 1.0);
  CHECK(b.in_support(0.5, 0.26));
  CHECK_FALSE(b.in_support(0.5, 0.25));
  CHECK(b.lower_boundary(0.5) == 0.25);
}
