#include "arbhedge/closed_form.hpp"
#include "arbhedge/errors.hpp"
#include "arbhedge/normal.hpp"
#include "arbhedge/pde.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <sstream>

using namespace arbhedge;

namespace {

const double kP0 = 2.0 * norm_cdf(1.0) - 1.0;

// Driftless lognormal call by direct integration of the terminal density.
double lognormal_call(double s, double strike, double sigma, double tau) {
  const double v = sigma * std::sqrt(tau);
  auto f = [&](double z) {
    const double st = s * std::exp(-0.5 * v * v + v * z);
    return std::max(st - strike, 0.0) * norm_pdf(z);
  };
  const double kink = (std::log(strike / s) + 0.5 * v * v) / v;
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  return GK::integrate(f, kink, 12.0, 15, 1e-14);
}

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

}  // namespace

TEST_CASE("Bessel money market on a 400 x 400 grid over (0, 6]") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto start = std::chrono::steady_clock::now();
  const auto sf = solve_pde(model, Payoff::money_market(), PdeGrid::uniform(1.0, 400, 0.0, 6.0, 400));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(std::abs(sf.value_at(0.0, 1.0) - kP0) < 1e-3);
  CHECK(secs < 5.0);
  CHECK(sf.residual_norm < 1e-9);
  const double d = extract_delta(sf, 0.0, 1.0);
  CHECK(std::abs(d / (2.0 * norm_pdf(1.0)) - 1.0) < 1e-3);
  // Minimal solution: u = 1 also solves the equation but has the wrong boundary data.
  CHECK(sf.value_at(0.0, 1.0) < 0.7);
}

TEST_CASE("Bessel c = 0.5 surfaces track the closed forms") {
  const auto model = MarketModel::bessel_drift(0.5, 1.0, 1.0);
  const BesselDriftModel m{0.5, 1.0, 1.0};
  const auto grid = PdeGrid::for_model(model, 400, 400);
  const auto mm = solve_pde(model, Payoff::money_market(), grid);
  const auto st = solve_pde(model, Payoff::stock(), grid);
  const auto call = solve_pde(model, Payoff::call(1.0), grid);
  for (double t : {0.0, 0.5}) {
    for (double s : {0.5, 1.0, 2.0}) {
      if (s <= 0.5 * t + 0.05) continue;
      CAPTURE(t);
      CAPTURE(s);
      CHECK(std::abs(mm.value_at(t, s) - bessel_money_market(m, t, s).value) < 1e-3);
      CHECK(std::abs(st.value_at(t, s) - bessel_stock(m, t, s).value) < 1e-3 * s);
      CHECK(std::abs(call.value_at(t, s) - bessel_call(m, 1.0, t, s).value) < 1e-3);
    }
  }
  CHECK(mm.value_at(0.4, 0.19) == 0.0);
}

TEST_CASE("GBM call equals the lognormal integral") {
  const auto model = make_model("gbm", {{"mu", 0.07}, {"sigma", 0.25}});
  const auto sf = solve_pde(model, Payoff::call(1.0), PdeGrid::for_model(model, 400, 400));
  for (double t : {0.0, 0.5}) {
    for (double s : {0.7, 1.0, 1.4}) {
      CAPTURE(t);
      CAPTURE(s);
      CHECK(std::abs(sf.value_at(t, s) - lognormal_call(s, 1.0, 0.25, 1.0 - t)) < 2e-4);
    }
  }
}

TEST_CASE("linear payoff on GBM has delta 1 and zero payoff gives zero surface") {
  const auto model = make_model("gbm", {{"mu", 0.03}, {"sigma", 0.3}});
  const auto grid = PdeGrid::for_model(model, 100, 200);
  const auto st = solve_pde(model, Payoff::stock(), grid);
  for (double s : {0.5, 1.0, 1.5}) {
    CHECK(extract_delta(st, 0.0, s) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(st.value_at(0.0, s) == doctest::Approx(s).epsilon(1e-8));
  }
  const auto z = solve_pde(model, Payoff::zero(), grid);
  for (double v : z.values) CHECK(v == 0.0);
}

TEST_CASE("reciprocal Bessel stock delta") {
  const auto model = MarketModel::reciprocal_bessel(1.0, 1.0);
  const auto sf = solve_pde(model, Payoff::stock(), PdeGrid::for_model(model, 400, 400));
  const double eta = kP0 - 2.0 * norm_pdf(1.0);
  CHECK(std::abs(extract_delta(sf, 0.0, 1.0) / eta - 1.0) < 1e-3);
  CHECK(std::abs(sf.value_at(0.0, 1.0) - kP0) < 1e-3);
}

TEST_CASE("comparison principle: ordered payoffs give ordered surfaces") {
  const auto model = MarketModel::bessel_drift(0.5, 1.0, 1.0);
  const auto grid = PdeGrid::for_model(model, 200, 200);
  const auto lo = solve_pde(model, Payoff::call(1.2), grid);
  const auto hi = solve_pde(model, Payoff::call(0.8), grid);
  const auto st = solve_pde(model, Payoff::stock(), grid);
  for (std::size_t i = 0; i < lo.values.size(); ++i) {
    CHECK(lo.values[i] <= hi.values[i] + 1e-12);
    CHECK(hi.values[i] <= st.values[i] + 1e-12);
    CHECK(lo.values[i] >= 0.0);
  }
}

TEST_CASE("terminal consistency") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto sf = solve_pde(model, Payoff::call(1.0), PdeGrid::uniform(1.0, 400, 0.0, 6.0, 600));
  for (double left : {1e-2, 1e-4, 1e-6}) {
    CHECK(std::abs(sf.value_at(1.0 - left, 1.6) - 0.6) < 5e-3);
  }
  CHECK(sf.value_at(1.0, 1.6) == doctest::Approx(0.6));
}

TEST_CASE("residual of sampled closed forms falls at second order") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const BesselDriftModel m{0.0, 1.0, 1.0};
  const ResidualWindow win{0.0, 0.5, 0.5, 3.0};
  std::vector<double> res;
  for (std::size_t f : {1, 2, 4}) {
    const auto grid = PdeGrid::uniform(1.0, 50 * f, 0.0, 6.0, 60 * f);
    const auto sf = sample_surface(model, grid, [&](double t, double s) { return bessel_money_market(m, t, s).value; });
    const auto r = residual_check(sf, model, win);
    REQUIRE(r.nodes > 0);
    res.push_back(r.max_abs);
  }
  CHECK(std::log2(res[0] / res[1]) >= 1.8);
  CHECK(std::log2(res[1] / res[2]) >= 1.8);
}

TEST_CASE("constant surface with vanishing diffusion has zero residual") {
  ModelCoefficients coef;
  coef.mu = [](double, const Vector&) { return Vector::Zero(1); };
  coef.sigma = [](double, const Vector&) { return Matrix::Zero(1, 1); };
  const auto model = MarketModel::custom("frozen", 1, 1, coef, Vector::Constant(1, 1.0), 1.0);
  const auto sf = sample_surface(model, PdeGrid::uniform(1.0, 20, 0.0, 3.0, 30), [](double, double) { return 2.5; });
  CHECK(residual_check(sf, model).max_abs == 0.0);
}

TEST_CASE("delta near the support boundary is flagged one-sided") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto sf = solve_pde(model, Payoff::money_market(), PdeGrid::uniform(1.0, 100, 0.0, 6.0, 100));
  CHECK(extract_delta_flagged(sf, 0.0, 0.01).one_sided);
  CHECK_FALSE(extract_delta_flagged(sf, 0.0, 1.0).one_sided);
}

TEST_CASE("surface export and policies") {
  CHECK(parse_boundary_policy("neumann_flat") == BoundaryPolicy::neumann_flat);
  CHECK_THROWS_AS(parse_boundary_policy("periodic"), ConfigError);
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto sf = solve_pde(model, Payoff::money_market(), PdeGrid::uniform(1.0, 10, 0.0, 3.0, 12));
  std::ostringstream out;
  write_surface_csv(sf, out);
  CHECK(out.str().rfind("t,s,value,delta\n", 0) == 0);
}

TEST_CASE("experimental 2d ADI on GBM") {
  Matrix sigma(2, 2);
  sigma << 0.2, 0.0, 0.1, 0.25;
  Vector mu(2), s0(2);
  mu << 0.05, 0.02;
  s0 << 1.0, 1.0;
  const auto model = MarketModel::gbm(mu, sigma, s0, 1.0);
  PdeGrid2d grid;
  grid.t_nodes = linspace(0.0, 1.0, 101);
  grid.s1_nodes = linspace(0.0, 4.0, 161);
  grid.s2_nodes = linspace(0.0, 4.0, 161);
  const auto port = solve_pde_2d_experimental(model, Payoff::market_portfolio(), grid);
  CHECK(port.value_at(1.0, 1.0) == doctest::Approx(2.0).epsilon(1e-6));
  const auto call = solve_pde_2d_experimental(model, Payoff::call(1.0, 0), grid);
  CHECK(std::abs(call.value_at(1.0, 1.5) - lognormal_call(1.0, 1.0, 0.2, 1.0)) < 2e-3);
}
