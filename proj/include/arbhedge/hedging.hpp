#pragma once

#include "arbhedge/market_model.hpp"
#include "arbhedge/payoff.hpp"
#include "arbhedge/pde.hpp"
#include "arbhedge/simulation.hpp"
#include "arbhedge/stats.hpp"

#include <atomic>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace arbhedge {

enum class StrategySource { closed_form, pde_surface, custom };
std::string to_string(StrategySource s);

struct StrategyOptions {
  // Off: queries outside the PDE grid throw. On: they are clamped and counted.
  bool allow_extrapolation = true;
};

// d = 1 self-financing strategy: eta(t, s) shares, value(t, s) the price it tracks.
struct Strategy {
  StrategySource source = StrategySource::custom;
  std::string reference;
  double initial_capital = 0.0;
  std::function<double(double, double)> eta;
  std::function<double(double, double)> value;
  std::shared_ptr<std::atomic<std::size_t>> extrapolated = std::make_shared<std::atomic<std::size_t>>(0);
};

// Closed-form registry strategy: eta = delta, capital h(0, S0).
Strategy build_strategy(const MarketModel& model, const Payoff& payoff);
Strategy build_strategy(const MarketModel& model, const Payoff& payoff, std::shared_ptr<const PriceSurface> surface,
                        const StrategyOptions& opts = {});
// Hold `shares` of the stock and capital - shares * S0 in cash.
Strategy buy_and_hold(double shares, double capital, std::string name);
// u(t, s) = Phi(s / sqrt(T - t)): replicates one unit in the driftless Bessel
// market at cost Phi(S0 / sqrt(T)).
Strategy adhoc_bessel_money_market(double horizon, double s0);

// Cost of the obvious superreplication: 1 for the money market, S0 for the
// stock or a call, L for a put; NaN when none is known.
double naive_superreplication_cost(const Payoff& payoff, double s0);

struct ReplicateOptions {
  unsigned threads = 0;
  bool track_value = true;
  double converged_tol = 0.02;         // on the median relative error
  double max_negative_fraction = 0.01;
  std::size_t checkpoints = 20;        // times used by the deflated-wealth check
};

struct ReplicationReport {
  std::string strategy;
  double initial_capital = 0.0;
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::vector<double> terminal_wealth;
  std::vector<double> target;
  std::vector<double> rel_error;  // |V - p| / max(p, v^p)
  std::vector<double> tracking;   // max_k |V(t_k) - h(t_k, S_k)|
  std::vector<char> negative;     // wealth went below zero somewhere
  double median_rel_error = 0.0;
  double p95_rel_error = 0.0;
  double median_abs_error = 0.0;
  double tracking_median = 0.0;
  double tracking_max = 0.0;
  double naive_cost = 0.0;
  double savings = 0.0;
  std::size_t negative_wealth_paths = 0;
  std::size_t extrapolated_queries = 0;
  bool failed = false;
  bool converged = false;
  std::vector<double> checkpoint_times;
  std::vector<MeanSe> deflated_wealth;  // mean Z V at the checkpoints
  // Consecutive checkpoint means of Z V non-increasing within 3 SE of the mean.
  bool supermartingale = true;
  // Stricter diagnostic: 3 SE of the paired per-path increments.
  bool supermartingale_paired = true;

  // Fraction of paths with V(T) >= p(S(T)) - eps * max(p, v^p).
  double fraction_superreplicated(double eps) const;
};

ReplicationReport replicate(const Strategy& strategy, const PathEnsemble& ensemble, const Payoff& payoff,
                            const ReplicateOptions& opts = {});

// V(t_k) along one path by a plain scalar loop.
std::vector<double> wealth_path(const Strategy& strategy, const PathEnsemble& ensemble, std::size_t path);

struct AuditOptions {
  ReplicateOptions replicate;
  double cost_tolerance = 1e-9;
  double superreplication_eps = 0.05;   // relative slack for discrete rebalancing
  double max_shortfall_fraction = 1e-3;
};

struct AuditReport {
  double v_p = 0.0;
  double competitor_cost = 0.0;
  bool cost_ok = false;                   // competitor_cost >= v^p - tolerance
  double competitor_shortfall_fraction = 0.0;
  bool valid = false;                     // competitor superreplicates on the ensemble
  bool supermartingale = false;           // deflated wealth of the strategy
  std::vector<MeanSe> deflated_wealth;
  bool passed = false;
};

AuditReport optimality_audit(const Strategy& strategy, const Strategy& competitor, const PathEnsemble& ensemble,
                             const Payoff& payoff, const AuditOptions& opts = {});
// Cost-only variant: the competitor is taken as valid.
AuditReport optimality_audit(const Strategy& strategy, double competitor_cost, const PathEnsemble& ensemble,
                             const Payoff& payoff, const AuditOptions& opts = {});

// path_id,V_T,target,abs_err
void write_replication_csv(const ReplicationReport& report, std::ostream& out);

}  // namespace arbhedge
