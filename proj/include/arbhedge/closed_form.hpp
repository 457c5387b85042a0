#pragma once

#include "arbhedge/market_model.hpp"
#include "arbhedge/payoff.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace arbhedge {

// Parameters of the Bessel-with-drift market: S = X + ct, support {s > ct}.
struct BesselDriftModel {
  double c = 0.0;
  double S0 = 1.0;
  double T = 1.0;

  static BesselDriftModel from(const MarketModel& model);
};

struct ClosedFormPrice {
  double value = 0.0;
  double delta = 0.0;
  std::string_view formula_id;  // static catalogue key
  std::optional<double> error_estimate;  // set by the quadrature route
};

struct QuadratureOptions {
  double abs_tol = 1e-10;
  unsigned max_depth = 30;
  double tail = 10.0;  // Gaussian truncation in units of the z-line
};

ClosedFormPrice bessel_money_market(const BesselDriftModel& m, double t, double s);
ClosedFormPrice bessel_stock(const BesselDriftModel& m, double t, double s);
ClosedFormPrice bessel_call(const BesselDriftModel& m, double strike, double t, double s);
// Puts come from the modified put-call parity.
ClosedFormPrice bessel_put(const BesselDriftModel& m, double strike, double t, double s);
// Two-term absorbed-Gaussian integral for any payoff of at most linear growth.
ClosedFormPrice bessel_general_payoff(const BesselDriftModel& m, const Payoff& p, double t, double s,
                                      const QuadratureOptions& opts = {});

ClosedFormPrice reciprocal_bessel_stock(double t, double s, double horizon);
ClosedFormPrice reciprocal_bessel_call(double strike, double t, double s, double horizon);
ClosedFormPrice reciprocal_bessel_put(double strike, double t, double s, double horizon);

// Formula registry keyed by (model, payoff kind).
bool has_closed_form(const MarketModel& model, const Payoff& payoff);
ClosedFormPrice closed_form_price(const MarketModel& model, const Payoff& payoff, double t, double s);

enum class Route { closed_form, pde, mc_p, mc_q };
std::string to_string(Route r);
Route parse_route(const std::string& name);

struct Quote {
  double value = 0.0;
  double std_error = 0.0;   // MC routes
  double tolerance = 0.0;   // deterministic error band (PDE)
  Route route = Route::closed_form;
};

struct ParityReport {
  double t = 0.0;
  double s = 0.0;
  double strike = 0.0;
  double lhs = 0.0;  // put + h^{stock}
  double rhs = 0.0;  // call + L h^{money}
  double residual = 0.0;
  double tolerance = 0.0;
  bool mixed_routes = false;
  bool holds = false;
  // Classical parity with undeflated prices: put + s versus call + L.
  double classical_gap = 0.0;
  bool classical_violated = false;
};

inline constexpr double kClosedFormParityTol = 1e-10;

ParityReport put_call_parity(double t, double s, double strike, const Quote& put, const Quote& stock,
                             const Quote& call, const Quote& money);
// All four prices from the closed-form registry.
ParityReport parity_closed_form(const MarketModel& model, double t, double s, double strike);

}  // namespace arbhedge
