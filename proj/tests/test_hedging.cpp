#include "arbhedge/errors.hpp"
#include "arbhedge/hedging.hpp"
#include "arbhedge/normal.hpp"
#include "arbhedge/pde.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

using namespace arbhedge;

namespace {

const double kP0 = 2.0 * norm_cdf(1.0) - 1.0;

PathEnsemble p_paths(const MarketModel& model, std::size_t paths, std::size_t steps, std::uint64_t seed = 5) {
  SimConfig cfg;
  cfg.n_paths = paths;
  cfg.n_steps = steps;
  cfg.seed = seed;
  return simulate_p(model, MprField(model), cfg);
}

}  // namespace

TEST_CASE("strategy construction") {
  const auto b0 = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto stock = build_strategy(b0, Payoff::stock());
  CHECK(stock.initial_capital == doctest::Approx(1.0).epsilon(1e-14));
  for (double t : {0.0, 0.5, 0.9})
    for (double s : {0.2, 1.0, 3.0}) CHECK(stock.eta(t, s) == doctest::Approx(1.0).epsilon(1e-12));
  const auto mm = build_strategy(b0, Payoff::money_market());
  CHECK(mm.initial_capital == doctest::Approx(kP0).epsilon(1e-14));
  CHECK(mm.eta(0.0, 1.0) == doctest::Approx(2.0 * norm_pdf(1.0)).epsilon(1e-13));
  const auto zero = build_strategy(b0, Payoff::zero());
  CHECK(zero.initial_capital == 0.0);
  CHECK(zero.eta(0.3, 1.2) == 0.0);
  CHECK_THROWS_AS(build_strategy(make_model("gbm", {}), Payoff::call(1.0)), ConfigError);
}

TEST_CASE("holding the stock replicates p1 exactly") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto ens = p_paths(model, 500, 1000);
  const auto rep = replicate(build_strategy(model, Payoff::stock()), ens, Payoff::stock());
  double worst = 0.0;
  for (std::size_t p = 0; p < rep.n_paths; ++p) worst = std::max(worst, std::abs(rep.terminal_wealth[p] - rep.target[p]));
  CHECK(worst < 1e-12);
  CHECK(rep.converged);
  CHECK_FALSE(rep.failed);
}

TEST_CASE("replicate matches the scalar wealth loop bit for bit and ignores thread count") {
  const auto model = MarketModel::bessel_drift(0.5, 1.0, 1.0);
  const auto ens = p_paths(model, 300, 500);
  const auto st = build_strategy(model, Payoff::call(1.0));
  ReplicateOptions one, three;
  one.threads = 1;
  three.threads = 3;
  const auto a = replicate(st, ens, Payoff::call(1.0), one);
  const auto b = replicate(st, ens, Payoff::call(1.0), three);
  CHECK(std::memcmp(a.terminal_wealth.data(), b.terminal_wealth.data(), a.terminal_wealth.size() * sizeof(double)) == 0);
  for (std::size_t p = 0; p < ens.n_paths; p += 37) {
    const auto w = wealth_path(st, ens, p);
    CHECK(std::memcmp(&w.back(), &a.terminal_wealth[p], sizeof(double)) == 0);
  }
  // Self-financing: V(t_k) = V(0) + sum eta (S_{j+1} - S_j), recomputed longhand.
  const std::size_t p = 11;
  double v = st.initial_capital;
  for (std::size_t k = 0; k + 1 < ens.n_times(); ++k) {
    const double eta = st.eta(ens.times[k], ens.state(p, k));
    v += eta * (ens.state(p, k + 1) - ens.state(p, k));
  }
  CHECK(std::memcmp(&v, &a.terminal_wealth[p], sizeof(double)) == 0);
}

TEST_CASE("Bessel money market replication converges and halves with the step") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto fine = p_paths(model, 400, 10000);
  const auto st = build_strategy(model, Payoff::money_market());
  const auto rep = replicate(st, fine, Payoff::money_market());
  CHECK(rep.median_rel_error < 0.02);
  CHECK(rep.converged);
  CHECK(rep.supermartingale);
  CHECK(rep.negative_wealth_paths == 0);
  CHECK(rep.savings == doctest::Approx(1.0 - kP0));
  const auto coarse = replicate(st, fine.coarsen(4), Payoff::money_market());
  CHECK(rep.median_rel_error < 0.75 * coarse.median_rel_error);
}

TEST_CASE("reciprocal Bessel stock: savings against buy and hold") {
  const auto model = MarketModel::reciprocal_bessel(1.0, 1.0);
  const auto st = build_strategy(model, Payoff::stock());
  CHECK(st.initial_capital == doctest::Approx(kP0).epsilon(1e-14));
  CHECK(naive_superreplication_cost(Payoff::stock(), 1.0) == 1.0);
  const auto ens = p_paths(model, 400, 5000);
  const auto rep = replicate(st, ens, Payoff::stock());
  CHECK(rep.savings == doctest::Approx(1.0 - kP0).epsilon(1e-12));
  CHECK(rep.median_rel_error < 0.05);

  const auto audit = optimality_audit(st, buy_and_hold(1.0, 1.0, "buy_and_hold"), ens, Payoff::stock());
  CHECK(audit.cost_ok);
  CHECK(audit.valid);
  CHECK(audit.competitor_cost == 1.0);
  CHECK(audit.passed);
}

TEST_CASE("audits against itself and the ad-hoc Bessel arbitrage") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto st = build_strategy(model, Payoff::money_market());
  const auto ens = p_paths(model, 400, 5000);
  const auto self = optimality_audit(st, st, ens, Payoff::money_market());
  CHECK(self.competitor_cost == self.v_p);
  CHECK(self.cost_ok);

  const auto adhoc = adhoc_bessel_money_market(1.0, 1.0);
  CHECK(adhoc.initial_capital == doctest::Approx(norm_cdf(1.0)).epsilon(1e-14));
  const auto audit = optimality_audit(st, adhoc, ens, Payoff::money_market());
  CHECK(audit.valid);
  CHECK(audit.cost_ok);
  CHECK(audit.passed);

  const auto cheap = optimality_audit(st, 0.5, ens, Payoff::money_market());
  CHECK_FALSE(cheap.cost_ok);
  CHECK_FALSE(cheap.passed);
}

TEST_CASE("a competitor that fails to superreplicate is reported invalid") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto st = build_strategy(model, Payoff::money_market());
  const auto ens = p_paths(model, 400, 500);
  const auto audit = optimality_audit(st, buy_and_hold(0.0, 0.9, "cash_0.9"), ens, Payoff::money_market());
  CHECK(audit.cost_ok);
  CHECK_FALSE(audit.valid);
  CHECK_FALSE(audit.passed);
}

TEST_CASE("negative wealth on more than 1% of paths fails the run") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto ens = p_paths(model, 400, 200);
  const auto rep = replicate(buy_and_hold(-3.0, 0.1, "short"), ens, Payoff::money_market());
  CHECK(rep.negative_wealth_paths > 4);
  CHECK(rep.failed);
}

TEST_CASE("pde-sourced strategy and extrapolation policy") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  auto surface = std::make_shared<const PriceSurface>(
      solve_pde(model, Payoff::money_market(), PdeGrid::uniform(1.0, 200, 0.0, 3.0, 200)));
  const auto st = build_strategy(model, Payoff::money_market(), surface);
  CHECK(std::abs(st.initial_capital - kP0) < 1e-3);
  CHECK(st.source == StrategySource::pde_surface);
  const auto ens = p_paths(model, 200, 2000);
  const auto rep = replicate(st, ens, Payoff::money_market());
  CHECK(rep.median_rel_error < 0.05);
  // Capped grid: some paths leave s <= 3.
  if (rep.extrapolated_queries == 0) MESSAGE("no path left the grid");
  StrategyOptions strict;
  strict.allow_extrapolation = false;
  const auto st_strict = build_strategy(model, Payoff::money_market(), surface, strict);
  CHECK_THROWS_AS(st_strict.eta(0.5, 10.0), ConfigError);
}

TEST_CASE("replication CSV export") {
  const auto model = MarketModel::bessel_drift(0.0, 1.0, 1.0);
  const auto ens = p_paths(model, 5, 10);
  const auto rep = replicate(build_strategy(model, Payoff::stock()), ens, Payoff::stock());
  std::ostringstream out;
  write_replication_csv(rep, out);
  const auto text = out.str();
  CHECK(text.rfind("path_id,V_T,target,abs_err\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 6);
}
