#pragma once

#include <functional>
#include <span>
#include <string>

namespace arbhedge {

enum class PayoffKind { money_market, stock, call, put, market_portfolio, custom };

enum class Growth { bounded, linear };

std::string to_string(PayoffKind kind);

// Nonnegative European claim p(S(T)).
class Payoff {
 public:
  using Function = std::function<double(std::span<const double>)>;

  static Payoff money_market();
  static Payoff stock(int index = 0);
  static Payoff call(double strike, int index = 0);
  static Payoff put(double strike, int index = 0);
  static Payoff market_portfolio();
  static Payoff zero();
  // Caller declares the growth class; nonnegativity is checked at evaluation.
  static Payoff custom(std::string description, Function fn, Growth growth, bool kinked = false);

  PayoffKind kind() const { return kind_; }
  int index() const { return index_; }
  double strike() const { return strike_; }
  const std::string& description() const { return description_; }
  Growth growth() const { return growth_; }
  // Nonsmooth terminal data (a kink the time stepper should damp).
  bool kinked() const { return kinked_; }
  bool is_zero() const { return zero_; }

  // Throws ConfigError when the claim evaluates negative or non-finite.
  double operator()(std::span<const double> s) const;
  double operator()(double s) const { return (*this)(std::span<const double>(&s, 1)); }

 private:
  PayoffKind kind_ = PayoffKind::money_market;
  int index_ = 0;
  double strike_ = 0.0;
  std::string description_;
  Growth growth_ = Growth::bounded;
  bool kinked_ = false;
  bool zero_ = false;
  Function fn_;
};

}  // namespace arbhedge
