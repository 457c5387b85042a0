#include "arbhedge/closed_form.hpp"
#include "arbhedge/errors.hpp"
#include "arbhedge/normal.hpp"
#include "arbhedge/simulation.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

#include <cmath>
#include <span>

using namespace arbhedge;

namespace {

const double kP0 = 2.0 * norm_cdf(1.0) - 1.0;

// E[p(S(T)) 1{no hit}] with S - c u a Brownian motion with drift -c killed at
// zero, by the method of images and adaptive Gauss-Kronrod.
double killed_bm_price(double c, double T, double t, double s, const std::function<double(double)>& p, double kink = -1.0) {
  const double tau = T - t, y0 = s - c * t, sd = std::sqrt(tau);
  auto dens = [&](double y) {
    const double a = (y - y0 + c * tau) / sd;
    const double b = (y + y0 + c * tau) / sd;
    return (norm_pdf(a) - std::exp(2.0 * c * y0 - 0.5 * b * b + 0.5 * a * a) * norm_pdf(a)) / sd;
  };
  auto f = [&](double y) { return p(y + c * T) * dens(y); };
  const double hi = y0 - c * tau + 12.0 * sd;
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double k = kink - c * T;
  if (k > 0.0 && k < hi) return GK::integrate(f, 0.0, k, 15, 1e-14) + GK::integrate(f, k, hi, 15, 1e-14);
  return GK::integrate(f, 0.0, hi, 15, 1e-14);
}

// Reciprocal Bessel: S = 1/|B| with B a 3d Brownian motion from (1/s, 0, 0).
double reciprocal_price(double T, double t, double s, double strike) {
  const double tau = T - t, r0 = 1.0 / s;
  auto dens = [&](double r) {
    return r / (r0 * std::sqrt(2.0 * M_PI * tau)) *
           (std::exp(-(r - r0) * (r - r0) / (2.0 * tau)) - std::exp(-(r + r0) * (r + r0) / (2.0 * tau)));
  };
  auto f = [&](double r) { return std::max(1.0 / r - strike, 0.0) * dens(r); };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double hi = r0 + 14.0 * std::sqrt(tau);
  if (strike > 0.0) return 1.0 / strike < hi ? GK::integrate(f, 0.0, 1.0 / strike, 15, 1e-14) : GK::integrate(f, 0.0, hi, 15, 1e-14);
  return GK::integrate(f, 0.0, hi, 15, 1e-14);
}

Payoff custom(const std::string& name, std::function<double(double)> fn, bool kinked = false) {
  return Payoff::custom(name, [fn](std::span<const double> s) { return fn(s[0]); }, Growth::linear, kinked);
}

}  // namespace

TEST_CASE("Bessel money market headline value") {
  const BesselDriftModel m{0.0, 1.0, 1.0};
  const auto v = bessel_money_market(m, 0.0, 1.0);
  CHECK(std::abs(v.value - kP0) <= 1e-12);
  CHECK(v.value < norm_cdf(1.0));
  CHECK(v.delta == doctest::Approx(2.0 * norm_pdf(1.0)).epsilon(1e-13));
}

TEST_CASE("closed forms agree with the killed Brownian motion density oracle") {
  for (double c : {0.0, 0.5, 1.0}) {
    const BesselDriftModel m{c, 1.0, 1.0};
    for (double t : {0.0, 0.3, 0.8}) {
      for (double off : {0.05, 0.5, 1.0, 2.5}) {
        const double s = c * t + off;
        CAPTURE(c);
        CAPTURE(t);
        CAPTURE(s);
        CHECK(bessel_money_market(m, t, s).value ==
              doctest::Approx(killed_bm_price(c, 1.0, t, s, [](double) { return 1.0; })).epsilon(1e-9));
        CHECK(bessel_stock(m, t, s).value ==
              doctest::Approx(killed_bm_price(c, 1.0, t, s, [](double x) { return x; })).epsilon(1e-9));
        for (double L : {0.2, 1.0, 1.7}) {
          const double ref = killed_bm_price(c, 1.0, t, s, [L](double x) { return std::max(x - L, 0.0); }, L);
          CHECK(bessel_call(m, L, t, s).value == doctest::Approx(ref).epsilon(1e-8).scale(1.0));
          const double put_ref = killed_bm_price(c, 1.0, t, s, [L](double x) { return std::max(L - x, 0.0); }, L);
          CHECK(bessel_put(m, L, t, s).value == doctest::Approx(put_ref).epsilon(1e-8).scale(1.0));
        }
      }
    }
  }
}

TEST_CASE("general payoff quadrature reproduces the named formulas") {
  for (double c : {0.0, 0.5}) {
    const BesselDriftModel m{c, 1.0, 1.0};
    for (double t : {0.0, 0.5}) {
      for (double off : {0.1, 1.0, 2.0}) {
        const double s = c * t + off;
        const auto one = bessel_general_payoff(m, custom("one", [](double) { return 1.0; }), t, s);
        CHECK(std::abs(one.value - bessel_money_market(m, t, s).value) <= 1e-10);
        REQUIRE(one.error_estimate.has_value());
        const auto lin = bessel_general_payoff(m, custom("lin", [](double x) { return x; }), t, s);
        CHECK(std::abs(lin.value - bessel_stock(m, t, s).value) <= 1e-10);
        const auto call = bessel_general_payoff(m, Payoff::call(1.2), t, s);
        CHECK(std::abs(call.value - bessel_call(m, 1.2, t, s).value) <= 1e-8);
        CHECK(bessel_general_payoff(m, Payoff::zero(), t, s).value == 0.0);
      }
    }
  }
}

TEST_CASE("stock and call identities") {
  const BesselDriftModel m0{0.0, 1.0, 1.0};
  for (double t : {0.0, 0.4, 0.99}) {
    for (double s : {0.1, 1.0, 3.0}) {
      CHECK(bessel_stock(m0, t, s).value == doctest::Approx(s).epsilon(1e-14));
      CHECK(bessel_stock(m0, t, s).delta == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(bessel_call(m0, 0.0, t, s).value == doctest::Approx(s).epsilon(1e-14));
    }
  }
  const BesselDriftModel m{0.5, 1.0, 1.0};
  for (double t : {0.0, 0.5}) {
    for (double off : {0.1, 1.0}) {
      const double s = m.c * t + off;
      CHECK(bessel_stock(m, t, s).value < s);
      // L <= cT: the call is the stock less L money-market units.
      for (double L : {0.1, 0.5}) {
        const double expected = bessel_stock(m, t, s).value - L * bessel_money_market(m, t, s).value;
        CHECK(bessel_call(m, L, t, s).value == doctest::Approx(expected).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("hedging prices decrease in the drift parameter") {
  double prev_mm = 2.0, prev_st = 2.0;
  for (double c : {0.0, 0.25, 0.5, 1.0, 2.0}) {
    const BesselDriftModel m{c, 1.0, 1.0};
    const double mm = bessel_money_market(m, 0.0, 1.0).value;
    const double st = bessel_stock(m, 0.0, 1.0).value;
    CHECK(mm < prev_mm);
    CHECK(st < prev_st);
    CHECK(st <= 1.0);
    prev_mm = mm;
    prev_st = st;
  }
}

TEST_CASE("deltas match central differences on a 20 x 20 lattice") {
  for (double c : {0.0, 0.5}) {
    const BesselDriftModel m{c, 1.0, 1.0};
    for (int i = 0; i < 20; ++i) {
      const double t = 0.9 * i / 19.0;
      for (int j = 0; j < 20; ++j) {
        const double s = c * t + 0.05 + 3.0 * j / 19.0;
        const double h = 1e-5;
        auto fd = [&](auto f) { return (f(s + h) - f(s - h)) / (2.0 * h); };
        CAPTURE(t);
        CAPTURE(s);
        CHECK(bessel_money_market(m, t, s).delta ==
              doctest::Approx(fd([&](double x) { return bessel_money_market(m, t, x).value; })).epsilon(1e-6));
        CHECK(bessel_stock(m, t, s).delta ==
              doctest::Approx(fd([&](double x) { return bessel_stock(m, t, x).value; })).epsilon(1e-6));
        CHECK(bessel_call(m, 1.1, t, s).delta ==
              doctest::Approx(fd([&](double x) { return bessel_call(m, 1.1, t, x).value; })).epsilon(1e-6));
        const double rs = 0.1 + 3.0 * j / 19.0;
        auto fdr = [&](auto f) { return (f(rs + h) - f(rs - h)) / (2.0 * h); };
        CHECK(reciprocal_bessel_stock(t, rs, 1.0).delta ==
              doctest::Approx(fdr([&](double x) { return reciprocal_bessel_stock(t, x, 1.0).value; })).epsilon(1e-6));
        CHECK(reciprocal_bessel_call(0.8, t, rs, 1.0).delta ==
              doctest::Approx(fdr([&](double x) { return reciprocal_bessel_call(0.8, t, x, 1.0).value; })).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("terminal and boundary limits") {
  const BesselDriftModel m{0.5, 1.0, 1.0};
  for (double left : {1e-2, 1e-4, 1e-6}) {
    const double t = 1.0 - left;
    CAPTURE(left);
    CHECK(bessel_money_market(m, t, 1.0).value == doctest::Approx(1.0).epsilon(10.0 * left));
    CHECK(bessel_stock(m, t, 1.2).value == doctest::Approx(1.2).epsilon(10.0 * left));
    CHECK(bessel_call(m, 1.0, t, 1.5).value == doctest::Approx(0.5).epsilon(10.0 * left));
    CHECK(reciprocal_bessel_stock(t, 1.0, 1.0).value == doctest::Approx(1.0).epsilon(10.0 * left));
    CHECK(reciprocal_bessel_call(0.5, t, 1.0, 1.0).value == doctest::Approx(0.5).epsilon(10.0 * left));
  }
  CHECK(bessel_money_market(m, 1.0, 1.0).value == 1.0);
  CHECK(bessel_money_market(m, 0.4, 0.2).value == 0.0);
  CHECK(bessel_stock(m, 0.4, 0.2).value == 0.0);
  CHECK_THROWS_AS(bessel_money_market(m, 0.4, 0.19), SupportError);
  CHECK_THROWS_AS(reciprocal_bessel_stock(0.0, -1.0, 1.0), SupportError);
}

TEST_CASE("reciprocal Bessel closed forms against the 3d radial density") {
  CHECK(reciprocal_bessel_stock(0.0, 1.0, 1.0).value == doctest::Approx(kP0).epsilon(1e-14));
  for (double t : {0.0, 0.5}) {
    for (double s : {0.3, 1.0, 2.5}) {
      CAPTURE(t);
      CAPTURE(s);
      const double st = reciprocal_bessel_stock(t, s, 1.0).value;
      CHECK(st == doctest::Approx(reciprocal_price(1.0, t, s, 0.0)).epsilon(1e-9));
      CHECK(st < s);
      for (double L : {0.25, 1.0, 2.0}) {
        const double call = reciprocal_bessel_call(L, t, s, 1.0).value;
        CHECK(call == doctest::Approx(reciprocal_price(1.0, t, s, L)).epsilon(1e-8).scale(1.0));
        CHECK(call <= st + 1e-15);
        CHECK(reciprocal_bessel_put(L, t, s, 1.0).value >= 0.0);
      }
      CHECK(reciprocal_bessel_call(1e-9, t, s, 1.0).value == doctest::Approx(st).epsilon(1e-7));
    }
  }
  CHECK(reciprocal_bessel_stock(0.0, 1e3, 1.0).value / 1e3 < 1e-3);
  CHECK(reciprocal_bessel_stock(0.0, 1e6, 1.0).value / 1e6 < 1e-6);
}

TEST_CASE("reciprocal call within 3 SE of MC under Q") {
  const auto model = MarketModel::reciprocal_bessel(1.0, 1.0);
  const MprField mpr(model);
  SimConfig cfg;
  cfg.n_paths = 40000;
  cfg.n_steps = 50;
  for (double L : {0.5, 1.0}) {
    const auto mc = price_mc(model, mpr, Payoff::call(L), cfg, McRoute::under_q);
    const double cf = reciprocal_bessel_call(L, 0.0, 1.0, 1.0).value;
    CHECK(std::abs(mc.estimate - cf) <= 3.0 * mc.std_error);
  }
}

TEST_CASE("modified put-call parity") {
  const auto b0 = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto rep = parity_closed_form(b0, 0.0, 1.0, 1.0);
  CHECK(std::abs(rep.residual) <= 1e-10);
  CHECK(rep.holds);
  // The bond is the mispriced asset here: the gap is L (h0 - 1).
  CHECK(rep.classical_gap == doctest::Approx(kP0 - 1.0).epsilon(1e-12));
  CHECK(rep.classical_violated);

  const auto rb = MarketModel::reciprocal_bessel(1.0, 1.0);
  const auto rr = parity_closed_form(rb, 0.0, 1.0, 1.0);
  CHECK(rr.holds);
  CHECK(rr.classical_gap == doctest::Approx(1.0 - kP0).epsilon(1e-12));
  CHECK(rr.classical_violated);

  const auto zero_strike = parity_closed_form(b0, 0.2, 1.3, 0.0);
  CHECK(zero_strike.holds);
  CHECK(std::abs(zero_strike.residual) <= 1e-12);

  Quote put{0.5, 0.0, 0.0, Route::closed_form}, stock{1.0, 0.0, 0.0, Route::closed_form};
  Quote call{0.6, 0.0, 0.0, Route::closed_form}, money{1.0, 0.0, 0.0, Route::closed_form};
  CHECK_FALSE(put_call_parity(0.0, 1.0, 1.0, put, stock, call, money).holds);
}

TEST_CASE("registry coverage") {
  const auto b = MarketModel::bessel_drift(0.5, 1.0, 1.0);
  const auto r = MarketModel::reciprocal_bessel(1.0, 1.0);
  const auto g = make_model("gbm", {});
  CHECK(has_closed_form(b, Payoff::put(1.0)));
  CHECK(has_closed_form(r, Payoff::money_market()));
  CHECK(closed_form_price(r, Payoff::money_market(), 0.0, 2.0).value == 1.0);
  CHECK_FALSE(has_closed_form(g, Payoff::call(1.0)));
  CHECK(has_closed_form(g, Payoff::zero()));
  CHECK_THROWS_AS(closed_form_price(g, Payoff::call(1.0), 0.0, 1.0), ConfigError);
  CHECK(parse_route("mc_q") == Route::mc_q);
  CHECK_THROWS_AS(parse_route("fft"), ConfigError);
}
