#include "arbhedge/closed_form.hpp"

#include "arbhedge/errors.hpp"
#include "arbhedge/normal.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace arbhedge {

namespace {

// exp(log_scale) * Phi(x) and exp(log_scale) * phi(x) without overflowing the scale.
double scaled_cdf(double log_scale, double x) { return std::exp(log_scale + log_norm_cdf(x)); }
double scaled_pdf(double log_scale, double x) { return kInvSqrt2Pi * std::exp(log_scale - 0.5 * x * x); }

void check_time(double t, double horizon) {
  if (!(t >= 0.0) || !(t <= horizon)) throw ConfigError("t must lie in [0, T]");
}

void check_bessel_point(const BesselDriftModel& m, double t, double s) {
  check_time(t, m.T);
  if (!std::isfinite(s) || s < m.c * t) throw SupportError("s below the support boundary c t");
}

double call_payoff_delta(double s, double strike) { return s > strike ? 1.0 : 0.0; }

}  // namespace

BesselDriftModel BesselDriftModel::from(const MarketModel& model) {
  if (model.kind() != ModelKind::bessel_drift) throw ConfigError("not a Bessel-with-drift model");
  return {model.bessel_c(), model.initial_state_1d(), model.horizon()};
}

ClosedFormPrice bessel_money_market(const BesselDriftModel& m, double t, double s) {
  check_bessel_point(m, t, s);
  ClosedFormPrice out;
  out.formula_id = "bessel_drift.money_market";
  const double tau = m.T - t;
  if (tau <= 0.0) {
    out.value = s > m.c * m.T ? 1.0 : 0.0;
    return out;
  }
  const double r = std::sqrt(tau);
  const double c = m.c;
  const double log_e = 2.0 * c * s - 2.0 * c * c * t;
  const double a = (s - c * m.T) / r;
  const double b = (-s - c * m.T + 2.0 * c * t) / r;
  out.value = std::max(0.0, norm_cdf(a) - scaled_cdf(log_e, b));
  out.delta = 2.0 * norm_pdf(a) / r - 2.0 * c * scaled_cdf(log_e, b);
  return out;
}

ClosedFormPrice bessel_call(const BesselDriftModel& m, double strike, double t, double s) {
  check_bessel_point(m, t, s);
  if (!(strike >= 0.0)) throw ConfigError("strike must be nonnegative");
  ClosedFormPrice out;
  out.formula_id = "bessel_drift.call";
  const double tau = m.T - t;
  const double c = m.c;
  if (tau <= 0.0) {
    const bool alive = s > c * m.T;
    out.value = alive ? std::max(s - strike, 0.0) : 0.0;
    out.delta = alive ? call_payoff_delta(s, strike) : 0.0;
    return out;
  }
  const double r = std::sqrt(tau);
  const double lt = std::max(c * m.T, strike);
  const double a = (s - lt) / r;
  const double b = (-lt + 2.0 * c * t - s) / r;
  const double log_e = 2.0 * c * s - 2.0 * c * c * t;
  const double e_pdf_b = scaled_pdf(log_e, b);
  const double e_cdf_b = scaled_cdf(log_e, b);
  const double pa = norm_pdf(a);
  const double ca = norm_cdf(a);
  const double g = r * e_pdf_b + (2.0 * c * t - s - strike) * e_cdf_b;  // E * G
  out.value = std::max(0.0, r * pa + (s - strike) * ca - g);
  out.delta = ca + pa * (lt - strike) / r - 2.0 * c * g - (-e_cdf_b + e_pdf_b * (strike - lt) / r);
  return out;
}

ClosedFormPrice bessel_stock(const BesselDriftModel& m, double t, double s) {
  check_bessel_point(m, t, s);
  ClosedFormPrice out;
  out.formula_id = "bessel_drift.stock";
  const double tau = m.T - t;
  const double c = m.c;
  if (tau <= 0.0) {
    const bool alive = s > c * m.T;
    out.value = alive ? s : 0.0;
    out.delta = alive ? 1.0 : 0.0;
    return out;
  }
  const double r = std::sqrt(tau);
  const double a = (s - c * m.T) / r;
  const double b = (2.0 * c * t - s - c * m.T) / r;
  const double log_e = 2.0 * c * s - 2.0 * c * c * t;
  const double e_cdf_b = scaled_cdf(log_e, b);
  out.value = std::max(0.0, s * norm_cdf(a) + e_cdf_b * (s - 2.0 * c * t));
  out.delta = norm_cdf(a) + 2.0 * c * norm_pdf(a) * t / r + e_cdf_b * (1.0 + 2.0 * c * (s - 2.0 * c * t));
  return out;
}

ClosedFormPrice bessel_put(const BesselDriftModel& m, double strike, double t, double s) {
  const auto call = bessel_call(m, strike, t, s);
  const auto money = bessel_money_market(m, t, s);
  const auto stock = bessel_stock(m, t, s);
  ClosedFormPrice out;
  out.formula_id = "bessel_drift.put";
  out.value = std::max(0.0, call.value + strike * money.value - stock.value);
  out.delta = call.delta + strike * money.delta - stock.delta;
  return out;
}

namespace {

struct QuadValue {
  double value = 0.0;
  double error = 0.0;
};

// int_{lo}^{hi} f over pieces split at the given interior points.
template <class F>
QuadValue integrate_pieces(F f, double lo, double hi, std::vector<double> cuts, const QuadratureOptions& opts) {
  QuadValue out;
  if (!(hi > lo)) return out;
  cuts.push_back(lo);
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());
  double prev = lo;
  for (double x : cuts) {
    if (x <= prev) continue;
    if (x > hi) break;
    double err = 0.0;
    out.value += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, prev, x, opts.max_depth,
                                                                               opts.abs_tol, &err);
    out.error += err;
    prev = x;
  }
  return out;
}

QuadValue general_value(const BesselDriftModel& m, const Payoff& p, double t, double s,
                        const QuadratureOptions& opts) {
  const double tau = m.T - t;
  const double c = m.c;
  const double r = std::sqrt(tau);
  std::vector<double> cuts1, cuts2;
  if (p.kind() == PayoffKind::call || p.kind() == PayoffKind::put) {
    cuts1.push_back((p.strike() - s) / r);
    cuts2.push_back((p.strike() + s - 2.0 * c * t) / r);
  }
  // Direct term: paths of the Gaussian that end above cT.
  const double l1 = (c * m.T - s) / r;
  const double lo1 = std::max(l1, -opts.tail);
  const double hi1 = std::max(lo1, opts.tail);
  auto f1 = [&](double z) { return norm_pdf(z) * p(z * r + s); };
  const auto i1 = integrate_pieces(f1, lo1, hi1, cuts1, opts);

  // Reflected term with the exponential weight folded into the Gaussian.
  const double log_e = 2.0 * c * s - 2.0 * c * c * t;
  const double l2 = (c * m.T - 2.0 * c * t + s) / r;
  const double lo2 = std::max(l2, -opts.tail);
  const double hi2 = std::max(opts.tail, lo2 + opts.tail);
  auto f2 = [&](double z) { return scaled_pdf(log_e, z) * p(z * r - s + 2.0 * c * t); };
  const auto i2 = integrate_pieces(f2, lo2, hi2, cuts2, opts);

  return {i1.value - i2.value, i1.error + i2.error};
}

}  // namespace

ClosedFormPrice bessel_general_payoff(const BesselDriftModel& m, const Payoff& p, double t, double s,
                                      const QuadratureOptions& opts) {
  check_bessel_point(m, t, s);
  ClosedFormPrice out;
  out.formula_id = "bessel_drift.quadrature";
  if (m.T - t <= 0.0) {
    out.value = s > m.c * m.T ? p(s) : 0.0;
    const double h = std::max(1e-5, 1e-7 * s);
    out.delta = (p(s + h) - p(std::max(0.0, s - h))) / (s + h - std::max(0.0, s - h));
    out.error_estimate = 0.0;
    return out;
  }
  const auto v = general_value(m, p, t, s, opts);
  const double budget = 100.0 * opts.abs_tol * std::max(1.0, std::abs(v.value));
  if (!std::isfinite(v.value) || v.error > budget)
    throw NumericalError("quadrature did not converge, error estimate " + std::to_string(v.error));
  out.value = std::max(0.0, v.value);
  out.error_estimate = v.error;

  const double h = std::max(1e-5, 1e-7 * s);
  if (s - h > m.c * t) {
    const double up = general_value(m, p, t, s + h, opts).value;
    const double dn = general_value(m, p, t, s - h, opts).value;
    out.delta = (up - dn) / (2.0 * h);
  } else {
    const double v1 = general_value(m, p, t, s + h, opts).value;
    const double v2 = general_value(m, p, t, s + 2.0 * h, opts).value;
    out.delta = (-3.0 * v.value + 4.0 * v1 - v2) / (2.0 * h);
  }
  return out;
}

ClosedFormPrice reciprocal_bessel_stock(double t, double s, double horizon) {
  check_time(t, horizon);
  if (!(s > 0.0) || !std::isfinite(s)) throw SupportError("reciprocal Bessel requires s > 0");
  ClosedFormPrice out;
  out.formula_id = "reciprocal_bessel.stock";
  const double tau = horizon - t;
  if (tau <= 0.0) {
    out.value = s;
    out.delta = 1.0;
    return out;
  }
  const double x = 1.0 / (s * std::sqrt(tau));
  // 2 Phi(x) - 1 = erf(x / sqrt 2), no cancellation for large s.
  const double e = std::erf(x * kInvSqrt2);
  out.value = s * e;
  out.delta = e - 2.0 * x * norm_pdf(x);
  return out;
}

ClosedFormPrice reciprocal_bessel_call(double strike, double t, double s, double horizon) {
  check_time(t, horizon);
  if (!(s > 0.0) || !std::isfinite(s)) throw SupportError("reciprocal Bessel requires s > 0");
  if (!(strike >= 0.0)) throw ConfigError("strike must be nonnegative");
  if (strike == 0.0) {
    auto out = reciprocal_bessel_stock(t, s, horizon);
    out.formula_id = "reciprocal_bessel.call";
    return out;
  }
  // Change of numeraire: the call on S~ = 1/X is L s~ times a Bessel put on X with strike 1/L.
  const BesselDriftModel bes{0.0, 1.0 / s, horizon};
  const double x = 1.0 / s;
  const auto put = bessel_put(bes, 1.0 / strike, t, x);
  ClosedFormPrice out;
  out.formula_id = "reciprocal_bessel.call";
  out.value = std::max(0.0, strike * s * put.value);
  out.delta = strike * put.value - (strike / s) * put.delta;
  if (horizon - t <= 0.0) {
    out.value = std::max(s - strike, 0.0);
    out.delta = call_payoff_delta(s, strike);
  }
  return out;
}

ClosedFormPrice reciprocal_bessel_put(double strike, double t, double s, double horizon) {
  const auto call = reciprocal_bessel_call(strike, t, s, horizon);
  const auto stock = reciprocal_bessel_stock(t, s, horizon);
  ClosedFormPrice out;
  out.formula_id = "reciprocal_bessel.put";
  out.value = std::max(0.0, call.value + strike - stock.value);
  out.delta = call.delta - stock.delta;
  return out;
}

bool has_closed_form(const MarketModel& model, const Payoff& payoff) {
  if (payoff.is_zero()) return true;
  if (model.dim() != 1) return false;
  if (payoff.kind() == PayoffKind::stock && payoff.index() != 0) return false;
  switch (model.kind()) {
    case ModelKind::bessel_drift:
      return true;
    case ModelKind::reciprocal_bessel:
      return payoff.kind() != PayoffKind::custom;
    default:
      return false;
  }
}

ClosedFormPrice closed_form_price(const MarketModel& model, const Payoff& payoff, double t, double s) {
  if (!has_closed_form(model, payoff))
    throw ConfigError("no closed form for payoff " + payoff.description() + " in model " + model.name());
  if (payoff.is_zero()) return {0.0, 0.0, "zero", std::nullopt};
  if (model.kind() == ModelKind::bessel_drift) {
    const auto m = BesselDriftModel::from(model);
    switch (payoff.kind()) {
      case PayoffKind::money_market:
        return bessel_money_market(m, t, s);
      case PayoffKind::stock:
      case PayoffKind::market_portfolio:
        return bessel_stock(m, t, s);
      case PayoffKind::call:
        return bessel_call(m, payoff.strike(), t, s);
      case PayoffKind::put:
        return bessel_put(m, payoff.strike(), t, s);
      case PayoffKind::custom:
        return bessel_general_payoff(m, payoff, t, s);
    }
  }
  const double horizon = model.horizon();
  switch (payoff.kind()) {
    case PayoffKind::money_market: {
      check_time(t, horizon);
      if (!(s > 0.0)) throw SupportError("reciprocal Bessel requires s > 0");
      return {1.0, 0.0, "reciprocal_bessel.money_market", std::nullopt};
    }
    case PayoffKind::stock:
    case PayoffKind::market_portfolio:
      return reciprocal_bessel_stock(t, s, horizon);
    case PayoffKind::call:
      return reciprocal_bessel_call(payoff.strike(), t, s, horizon);
    case PayoffKind::put:
      return reciprocal_bessel_put(payoff.strike(), t, s, horizon);
    default:
      break;
  }
  throw ConfigError("no closed form for payoff " + payoff.description());
}

std::string to_string(Route r) {
  switch (r) {
    case Route::closed_form:
      return "closed_form";
    case Route::pde:
      return "pde";
    case Route::mc_p:
      return "mc_p";
    case Route::mc_q:
      return "mc_q";
  }
  return "?";
}

Route parse_route(const std::string& name) {
  if (name == "closed_form") return Route::closed_form;
  if (name == "pde") return Route::pde;
  if (name == "mc_p") return Route::mc_p;
  if (name == "mc_q") return Route::mc_q;
  throw ConfigError("unknown route: " + name);
}

ParityReport put_call_parity(double t, double s, double strike, const Quote& put, const Quote& stock,
                             const Quote& call, const Quote& money) {
  ParityReport rep;
  rep.t = t;
  rep.s = s;
  rep.strike = strike;
  rep.lhs = put.value + stock.value;
  rep.rhs = call.value + strike * money.value;
  rep.residual = rep.lhs - rep.rhs;

  const Quote* quotes[] = {&put, &stock, &call, &money};
  const double weights[] = {1.0, 1.0, 1.0, strike};
  double var = 0.0;
  double band = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (quotes[i]->route != put.route) rep.mixed_routes = true;
    var += weights[i] * weights[i] * quotes[i]->std_error * quotes[i]->std_error;
    band += weights[i] * quotes[i]->tolerance;
  }
  bool all_closed = true;
  for (const Quote* q : quotes) all_closed = all_closed && q->route == Route::closed_form;
  rep.tolerance = all_closed ? kClosedFormParityTol : kClosedFormParityTol + 3.0 * std::sqrt(var) + band;
  rep.holds = std::abs(rep.residual) <= rep.tolerance;

  rep.classical_gap = (put.value + s) - (call.value + strike);
  rep.classical_violated = std::abs(rep.classical_gap) > rep.tolerance;
  return rep;
}

ParityReport parity_closed_form(const MarketModel& model, double t, double s, double strike) {
  const Quote put{closed_form_price(model, Payoff::put(strike), t, s).value};
  const Quote stock{closed_form_price(model, Payoff::stock(), t, s).value};
  const Quote call{closed_form_price(model, Payoff::call(strike), t, s).value};
  const Quote money{closed_form_price(model, Payoff::money_market(), t, s).value};
  return put_call_parity(t, s, strike, put, stock, call, money);
}

}  // namespace arbhedge
