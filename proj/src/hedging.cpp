#include "arbhedge/hedging.hpp"

#include "arbhedge/closed_form.hpp"
#include "arbhedge/errors.hpp"
#include "arbhedge/format.hpp"
#include "arbhedge/kernels.hpp"
#include "arbhedge/normal.hpp"
#include "arbhedge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace arbhedge {

std::string to_string(StrategySource s) {
  switch (s) {
    case StrategySource::closed_form:
      return "closed_form";
    case StrategySource::pde_surface:
      return "pde_surface";
    case StrategySource::custom:
      return "custom";
  }
  return "?";
}

Strategy build_strategy(const MarketModel& model, const Payoff& payoff) {
  if (!has_closed_form(model, payoff))
    throw ConfigError("no closed form for " + payoff.description() + " in " + model.name() + "; use a pde surface");
  Strategy st;
  st.source = StrategySource::closed_form;
  const double s0 = model.initial_state_1d();
  const auto root = closed_form_price(model, payoff, 0.0, s0);
  st.reference = std::string(root.formula_id);
  st.initial_capital = payoff.is_zero() ? 0.0 : root.value;
  if (payoff.is_zero()) {
    st.eta = [](double, double) { return 0.0; };
    st.value = [](double, double) { return 0.0; };
    return st;
  }
  st.eta = [model, payoff](double t, double s) { return closed_form_price(model, payoff, t, s).delta; };
  st.value = [model, payoff](double t, double s) { return closed_form_price(model, payoff, t, s).value; };
  return st;
}

Strategy build_strategy(const MarketModel& model, const Payoff&, std::shared_ptr<const PriceSurface> surface,
                        const StrategyOptions& opts) {
  if (!surface) throw ConfigError("build_strategy: null surface");
  Strategy st;
  st.source = StrategySource::pde_surface;
  st.reference = "pde:" + std::to_string(surface->n_t() - 1) + "x" + std::to_string(surface->n_s() - 1);
  const double s0 = model.initial_state_1d();
  if (!surface->covers(0.0, s0)) throw ConfigError("pde surface does not cover the initial state");
  st.initial_capital = std::max(0.0, surface->value_at(0.0, s0));
  auto counter = st.extrapolated;
  const bool allow = opts.allow_extrapolation;
  auto clamp_query = [surface, counter, allow](double t, double& s) {
    if (surface->covers(t, s)) return;
    if (!allow)
      throw ConfigError("strategy query outside the pde grid at t=" + format_double(t) + ", s=" + format_double(s));
    counter->fetch_add(1, std::memory_order_relaxed);
    s = std::clamp(s, surface->s.front(), surface->s.back());
  };
  st.eta = [surface, clamp_query](double t, double s) {
    clamp_query(t, s);
    return extract_delta(*surface, t, s);
  };
  st.value = [surface, clamp_query](double t, double s) {
    clamp_query(t, s);
    return surface->value_at(t, s);
  };
  return st;
}

Strategy buy_and_hold(double shares, double capital, std::string name) {
  Strategy st;
  st.source = StrategySource::custom;
  st.reference = std::move(name);
  st.initial_capital = capital;
  st.eta = [shares](double, double) { return shares; };
  st.value = [](double, double) { return std::numeric_limits<double>::quiet_NaN(); };
  return st;
}

Strategy adhoc_bessel_money_market(double horizon, double s0) {
  Strategy st;
  st.source = StrategySource::custom;
  st.reference = "adhoc.phi_s_over_sqrt_tau";
  st.initial_capital = norm_cdf(s0 / std::sqrt(horizon));
  st.eta = [horizon](double t, double s) {
    const double r = std::sqrt(horizon - t);
    return norm_pdf(s / r) / r;
  };
  st.value = [horizon](double t, double s) {
    const double tau = horizon - t;
    return tau > 0.0 ? norm_cdf(s / std::sqrt(tau)) : (s > 0.0 ? 1.0 : 0.0);
  };
  return st;
}

double naive_superreplication_cost(const Payoff& payoff, double s0) {
  if (payoff.is_zero()) return 0.0;
  switch (payoff.kind()) {
    case PayoffKind::money_market:
      return 1.0;
    case PayoffKind::stock:
    case PayoffKind::market_portfolio:
    case PayoffKind::call:
      return s0;
    case PayoffKind::put:
      return payoff.strike();
    case PayoffKind::custom:
      break;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

namespace {

constexpr std::size_t kBlock = 256;

std::vector<std::size_t> checkpoint_indices(std::size_t n_times, std::size_t count) {
  std::vector<std::size_t> idx;
  count = std::max<std::size_t>(2, std::min(count, n_times));
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t k = (c * (n_times - 1)) / (count - 1);
    if (idx.empty() || idx.back() != k) idx.push_back(k);
  }
  return idx;
}

struct DeflatedCheck {
  bool ok = true;      // mean(t_c) - mean(t_{c-1}) <= 3 SE of mean(t_c)
  bool paired = true;  // same with the SE of the per-path differences
};

// Mean of Z V at the checkpoints and both non-increase tests.
DeflatedCheck deflated_check(const std::vector<double>& zv, std::size_t n_paths, std::size_t n_check,
                             std::vector<MeanSe>& means) {
  means.assign(n_check, {});
  std::vector<double> col(n_paths), diff(n_paths);
  DeflatedCheck out;
  for (std::size_t c = 0; c < n_check; ++c) {
    for (std::size_t p = 0; p < n_paths; ++p) col[p] = zv[p * n_check + c];
    means[c] = mean_se(col);
    if (c == 0) continue;
    const double slack = 1e-12 * std::max(1.0, std::abs(means[c - 1].mean));
    if (means[c].mean - means[c - 1].mean > 3.0 * means[c].se + slack) out.ok = false;
    for (std::size_t p = 0; p < n_paths; ++p) diff[p] = zv[p * n_check + c] - zv[p * n_check + c - 1];
    const MeanSe d = mean_se(diff);
    if (d.mean > 3.0 * d.se + slack) out.paired = false;
  }
  return out;
}

}  // namespace

double ReplicationReport::fraction_superreplicated(double eps) const {
  if (n_paths == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t p = 0; p < n_paths; ++p) {
    const double scale = std::max(target[p], initial_capital);
    if (terminal_wealth[p] >= target[p] - eps * scale) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(n_paths);
}

ReplicationReport replicate(const Strategy& strategy, const PathEnsemble& ens, const Payoff& payoff,
                            const ReplicateOptions& opts) {
  if (ens.measure != Measure::P) throw ConfigError("replicate needs an ensemble simulated under P");
  if (ens.d != 1) throw ConfigError("replicate: d = 1 only");
  if (ens.n_times() < 2) throw ConfigError("replicate: ensemble has no steps");
  if (strategy.initial_capital < 0.0) throw ConfigError("initial capital must be nonnegative");

  const std::size_t np = ens.n_paths;
  const std::size_t nt = ens.n_times();
  ReplicationReport rep;
  rep.strategy = strategy.reference;
  rep.initial_capital = strategy.initial_capital;
  rep.n_paths = np;
  rep.n_steps = nt - 1;
  rep.terminal_wealth.assign(np, 0.0);
  rep.target.assign(np, 0.0);
  rep.rel_error.assign(np, 0.0);
  rep.tracking.assign(np, 0.0);
  rep.negative.assign(np, 0);

  const auto checks = checkpoint_indices(nt, opts.checkpoints);
  const std::size_t nc = checks.size();
  std::vector<double> zv(np * nc, 0.0);
  for (std::size_t k : checks) rep.checkpoint_times.push_back(ens.times[k]);

  const auto& kern = kernels::active_kernels();
  const std::size_t n_blocks = (np + kBlock - 1) / kBlock;
  const bool track = opts.track_value && static_cast<bool>(strategy.value);
  const std::size_t before = strategy.extrapolated->load();

  for_each_block(n_blocks, opts.threads, [&](std::size_t b) {
    const std::size_t p0 = b * kBlock;
    const std::size_t nb = std::min(kBlock, np - p0);
    double v[kBlock], eta[kBlock], sp[kBlock], sn[kBlock], track_max[kBlock];
    char neg[kBlock];
    for (std::size_t i = 0; i < nb; ++i) {
      v[i] = strategy.initial_capital;
      track_max[i] = 0.0;
      neg[i] = 0;
    }
    std::size_t next_check = 0;
    auto record_check = [&](std::size_t k) {
      if (next_check < nc && checks[next_check] == k) {
        for (std::size_t i = 0; i < nb; ++i) zv[(p0 + i) * nc + next_check] = ens.deflator_at(p0 + i, k) * v[i];
        ++next_check;
      }
    };
    record_check(0);
    for (std::size_t k = 0; k + 1 < nt; ++k) {
      const double t = ens.times[k];
      for (std::size_t i = 0; i < nb; ++i) {
        sp[i] = ens.state(p0 + i, k);
        sn[i] = ens.state(p0 + i, k + 1);
        eta[i] = strategy.eta(t, sp[i]);
      }
      kern.wealth_step(nb, v, eta, sp, sn);
      const double t1 = ens.times[k + 1];
      for (std::size_t i = 0; i < nb; ++i) {
        if (!std::isfinite(v[i])) throw NumericalError("non-finite wealth in replication");
        if (v[i] < 0.0) neg[i] = 1;
        if (track) track_max[i] = std::max(track_max[i], std::abs(v[i] - strategy.value(t1, sn[i])));
      }
      record_check(k + 1);
    }
    for (std::size_t i = 0; i < nb; ++i) {
      const std::size_t p = p0 + i;
      const double target = payoff(ens.state(p, nt - 1));
      rep.terminal_wealth[p] = v[i];
      rep.target[p] = target;
      const double denom = std::max(target, strategy.initial_capital);
      rep.rel_error[p] = denom > 0.0 ? std::abs(v[i] - target) / denom : std::abs(v[i] - target);
      rep.tracking[p] = track_max[i];
      rep.negative[p] = neg[i];
    }
  });

  std::vector<double> abs_err(np);
  for (std::size_t p = 0; p < np; ++p) {
    abs_err[p] = std::abs(rep.terminal_wealth[p] - rep.target[p]);
    if (rep.negative[p]) ++rep.negative_wealth_paths;
  }
  rep.median_rel_error = quantile(rep.rel_error, 0.5);
  rep.p95_rel_error = quantile(rep.rel_error, 0.95);
  rep.median_abs_error = quantile(abs_err, 0.5);
  if (track) {
    rep.tracking_median = quantile(rep.tracking, 0.5);
    rep.tracking_max = *std::max_element(rep.tracking.begin(), rep.tracking.end());
  }
  rep.naive_cost = naive_superreplication_cost(payoff, ens.state(0, 0));
  rep.savings = rep.naive_cost - rep.initial_capital;
  rep.extrapolated_queries = strategy.extrapolated->load() - before;
  rep.failed = static_cast<double>(rep.negative_wealth_paths) > opts.max_negative_fraction * static_cast<double>(np);
  rep.converged = rep.median_rel_error < opts.converged_tol;
  const auto check = deflated_check(zv, np, nc, rep.deflated_wealth);
  rep.supermartingale = check.ok;
  rep.supermartingale_paired = check.paired;
  return rep;
}

std::vector<double> wealth_path(const Strategy& strategy, const PathEnsemble& ens, std::size_t path) {
  std::vector<double> v(ens.n_times());
  v[0] = strategy.initial_capital;
  for (std::size_t k = 0; k + 1 < ens.n_times(); ++k) {
    const double sp = ens.state(path, k);
    const double sn = ens.state(path, k + 1);
    v[k + 1] = v[k] + strategy.eta(ens.times[k], sp) * (sn - sp);
  }
  return v;
}

AuditReport optimality_audit(const Strategy& strategy, const Strategy& competitor, const PathEnsemble& ensemble,
                             const Payoff& payoff, const AuditOptions& opts) {
  AuditReport out;
  auto ropts = opts.replicate;
  ropts.track_value = false;
  const auto own = replicate(strategy, ensemble, payoff, ropts);
  const auto comp = replicate(competitor, ensemble, payoff, ropts);
  out.v_p = strategy.initial_capital;
  out.competitor_cost = competitor.initial_capital;
  out.cost_ok = out.competitor_cost >= out.v_p - opts.cost_tolerance;
  out.competitor_shortfall_fraction = 1.0 - comp.fraction_superreplicated(opts.superreplication_eps);
  out.valid = out.competitor_shortfall_fraction <= opts.max_shortfall_fraction;
  out.supermartingale = own.supermartingale;
  out.deflated_wealth = own.deflated_wealth;
  out.passed = out.valid && out.cost_ok && out.supermartingale;
  return out;
}

AuditReport optimality_audit(const Strategy& strategy, double competitor_cost, const PathEnsemble& ensemble,
                             const Payoff& payoff, const AuditOptions& opts) {
  AuditReport out;
  auto ropts = opts.replicate;
  ropts.track_value = false;
  const auto own = replicate(strategy, ensemble, payoff, ropts);
  out.v_p = strategy.initial_capital;
  out.competitor_cost = competitor_cost;
  out.cost_ok = competitor_cost >= out.v_p - opts.cost_tolerance;
  out.valid = true;
  out.supermartingale = own.supermartingale;
  out.deflated_wealth = own.deflated_wealth;
  out.passed = out.cost_ok && out.supermartingale;
  return out;
}

void write_replication_csv(const ReplicationReport& rep, std::ostream& out) {
  out << "path_id,V_T,target,abs_err\n";
  for (std::size_t p = 0; p < rep.n_paths; ++p) {
    out << p << ',' << format_double(rep.terminal_wealth[p]) << ',' << format_double(rep.target[p]) << ','
        << format_double(std::abs(rep.terminal_wealth[p] - rep.target[p])) << '\n';
  }
}

}  // namespace arbhedge
