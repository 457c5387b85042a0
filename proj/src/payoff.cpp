#include "arbhedge/payoff.hpp"

#include "arbhedge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace arbhedge {

std::string to_string(PayoffKind kind) {
  switch (kind) {
    case PayoffKind::money_market: return "money_market";
    case PayoffKind::stock: return "stock";
    case PayoffKind::call: return "call";
    case PayoffKind::put: return "put";
    case PayoffKind::market_portfolio: return "market_portfolio";
    case PayoffKind::custom: return "custom";
  }
  return "unknown";
}

namespace {

std::string describe(const char* what, double strike, int index) {
  std::ostringstream os;
  os << what << "(S" << index + 1;
  if (strike >= 0.0) os << ", L=" << strike;
  os << ")";
  return os.str();
}

}  // namespace

Payoff Payoff::money_market() {
  Payoff p;
  p.kind_ = PayoffKind::money_market;
  p.description_ = "1";
  p.fn_ = [](std::span<const double>) { return 1.0; };
  return p;
}

Payoff Payoff::stock(int index) {
  if (index < 0) throw ConfigError("stock payoff: negative index");
  Payoff p;
  p.kind_ = PayoffKind::stock;
  p.index_ = index;
  p.growth_ = Growth::linear;
  p.description_ = describe("stock", -1.0, index);
  p.fn_ = [index](std::span<const double> s) { return s[static_cast<std::size_t>(index)]; };
  return p;
}

Payoff Payoff::call(double strike, int index) {
  if (!(strike >= 0.0) || index < 0) throw ConfigError("call payoff: strike must be >= 0");
  Payoff p;
  p.kind_ = PayoffKind::call;
  p.index_ = index;
  p.strike_ = strike;
  p.growth_ = Growth::linear;
  p.kinked_ = strike > 0.0;
  p.description_ = describe("call", strike, index);
  p.fn_ = [index, strike](std::span<const double> s) {
    return std::max(s[static_cast<std::size_t>(index)] - strike, 0.0);
  };
  return p;
}

Payoff Payoff::put(double strike, int index) {
  if (!(strike >= 0.0) || index < 0) throw ConfigError("put payoff: strike must be >= 0");
  Payoff p;
  p.kind_ = PayoffKind::put;
  p.index_ = index;
  p.strike_ = strike;
  p.growth_ = Growth::bounded;
  p.kinked_ = strike > 0.0;
  p.zero_ = strike == 0.0;
  p.description_ = describe("put", strike, index);
  p.fn_ = [index, strike](std::span<const double> s) {
    return std::max(strike - s[static_cast<std::size_t>(index)], 0.0);
  };
  return p;
}

Payoff Payoff::market_portfolio() {
  Payoff p;
  p.kind_ = PayoffKind::market_portfolio;
  p.growth_ = Growth::linear;
  p.description_ = "sum_i S_i";
  p.fn_ = [](std::span<const double> s) {
    double acc = 0.0;
    for (double v : s) acc += v;
    return acc;
  };
  return p;
}

Payoff Payoff::zero() {
  Payoff p;
  p.kind_ = PayoffKind::custom;
  p.description_ = "0";
  p.zero_ = true;
  p.fn_ = [](std::span<const double>) { return 0.0; };
  return p;
}

Payoff Payoff::custom(std::string description, Function fn, Growth growth, bool kinked) {
  if (!fn) throw ConfigError("custom payoff: empty function");
  Payoff p;
  p.kind_ = PayoffKind::custom;
  p.description_ = std::move(description);
  p.growth_ = growth;
  p.kinked_ = kinked;
  p.fn_ = std::move(fn);
  return p;
}

double Payoff::operator()(std::span<const double> s) const {
  const double v = fn_(s);
  if (!(v >= 0.0) || !std::isfinite(v)) {
    std::ostringstream os;
    os << "payoff '" << description_ << "' evaluated to " << v << "; claims must be nonnegative";
    throw ConfigError(os.str());
  }
  return v;
}

}  // namespace arbhedge
