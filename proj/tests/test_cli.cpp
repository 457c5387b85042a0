#include "arbhedge/cli.hpp"
#include "arbhedge/errors.hpp"
#include "arbhedge/normal.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace arbhedge;
using namespace arbhedge::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const double kP0 = 2.0 * norm_cdf(1.0) - 1.0;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "arbhedge_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

FlatConfig base(const fs::path& out) {
  return {{"model", "bessel_drift"}, {"model.c", 0.0}, {"model.S0", 1.0}, {"model.T", 1.0}, {"output.dir", out.string()}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(ARBHEDGE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config resolution") {
  const auto flat = flatten(json::parse(R"({"model": {"c": 0.5}, "sim": {"paths": 1234, "seed": 7}, "routes": "all"})"));
  CHECK(flat.at("model.c") == 0.5);
  const auto cfg = resolve(flat);
  CHECK(cfg.sim.n_paths == 1234);
  CHECK(cfg.routes_all);
  CHECK(cfg.routes.size() == 4);
  CHECK(cfg.echo.at("sim.seed") == 7);
  CHECK(cfg.echo.at("model.c") == 0.5);

  const auto defaulted = resolve({});
  CHECK(defaulted.echo.count("sim.seed") == 1);
  CHECK_THROWS_AS(resolve({{"sim.pathz", 5}}), ConfigError);
  CHECK_THROWS_AS(resolve({{"routes", "closed_form,fft"}}), ConfigError);
  CHECK_THROWS_AS(resolve({{"model", "heston"}}), ConfigError);
  CHECK_THROWS_AS(resolve({{"payoff", "call"}, {"payoff.barrier", 2.0}}), ConfigError);
  CHECK_THROWS_AS(resolve({{"routes", json::array()}}), ConfigError);

  const auto [k, v] = parse_assignment("payoff.strike=1.5");
  CHECK(k == "payoff.strike");
  CHECK(v == 1.5);
  CHECK(parse_assignment("model=gbm").second == "gbm");
  CHECK_THROWS_AS(parse_assignment("novalue"), ConfigError);
}

TEST_CASE("environment overrides") {
  const auto dir = scratch("env");
  setenv("ARBHEDGE_OUTPUT_DIR", dir.string().c_str(), 1);
  setenv("ARBHEDGE_THREADS", "2", 1);
  FlatConfig merged;
  apply_environment(merged);
  unsetenv("ARBHEDGE_OUTPUT_DIR");
  unsetenv("ARBHEDGE_THREADS");
  const auto cfg = resolve(merged);
  CHECK(cfg.output_dir == dir.string());
  CHECK(cfg.sim.threads == 2);
}

TEST_CASE("price: headline money market by all routes") {
  const auto dir = scratch("price_all");
  auto cfg = base(dir);
  cfg["payoff"] = "money_market";
  cfg["routes"] = "all";
  cfg["sim.paths"] = 20000;
  const auto res = run_command("price", cfg);
  CHECK(res.exit_code == kOk);
  const auto& recs = res.summary["records"];
  REQUIRE(recs.size() == 4);
  CHECK(std::abs(recs[0]["value"].get<double>() - kP0) <= 1e-12);
  CHECK(std::abs(recs[1]["value"].get<double>() - kP0) < 1e-3);
  for (std::size_t i = 2; i < 4; ++i)
    CHECK(std::abs(recs[i]["value"].get<double>() - kP0) <= 3.0 * recs[i]["std_error"].get<double>());
  CHECK(res.summary["consistency"]["consistent"] == true);
  CHECK(res.summary["schema"] == 1);
  CHECK(fs::exists(dir / "price.json"));
  CHECK(fs::exists(dir / "price.csv"));
  const auto file = json::parse(slurp(dir / "price.json"));
  CHECK(file["config"]["sim.seed"] == 20100503);
}

TEST_CASE("price: zero payoff is zero everywhere") {
  const auto dir = scratch("price_zero");
  auto cfg = base(dir);
  cfg["payoff"] = "zero";
  cfg["routes"] = "all";
  cfg["sim.paths"] = 1000;
  const auto res = run_command("price", cfg);
  CHECK(res.exit_code == kOk);
  REQUIRE(res.summary["records"].size() == 4);
  for (const auto& r : res.summary["records"]) CHECK(r["value"].get<double>() == 0.0);
}

TEST_CASE("price: reciprocal Bessel stock by closed form and mc_q") {
  const auto dir = scratch("price_recip");
  FlatConfig cfg{{"model", "reciprocal_bessel"}, {"payoff", "stock"}, {"routes", "closed_form,mc_q"},
                 {"sim.paths", 20000}, {"output.dir", dir.string()}};
  const auto res = run_command("price", cfg);
  CHECK(res.exit_code == kOk);
  CHECK(res.summary["consistency"]["consistent"] == true);
}

TEST_CASE("price: explicit unavailable route is a validation error") {
  const auto dir = scratch("price_gbm");
  FlatConfig cfg{{"model", "gbm"}, {"payoff", "call"}, {"routes", "closed_form"}, {"output.dir", dir.string()}};
  CHECK(run_command("price", cfg).exit_code == kValidation);
  cfg["routes"] = "all";
  cfg["sim.paths"] = 2000;
  const auto res = run_command("price", cfg);
  CHECK(res.exit_code == kOk);
  CHECK(res.summary["records"].size() == 3);
}

TEST_CASE("hedge-replicate runs") {
  SUBCASE("Bessel p0 default run") {
    const auto dir = scratch("hedge_p0");
    auto cfg = base(dir);
    const auto res = run_command("hedge-replicate", cfg);
    CHECK(res.exit_code == kOk);
    CHECK(res.summary["report"]["median_rel_error"].get<double>() < 0.02);
    CHECK(res.summary["report"]["converged"] == true);
    CHECK(fs::exists(dir / "hedge_report.json"));
    CHECK(fs::exists(dir / "hedge_paths.csv"));
  }
  SUBCASE("Bessel p1 replicates exactly") {
    const auto dir = scratch("hedge_p1");
    auto cfg = base(dir);
    cfg["payoff"] = "stock";
    cfg["hedge.steps"] = 1000;
    const auto res = run_command("hedge-replicate", cfg);
    CHECK(res.exit_code == kOk);
    CHECK(res.summary["report"]["median_abs_error"].get<double>() < 1e-12);
  }
  SUBCASE("coarse run flags non-convergence but succeeds") {
    const auto dir = scratch("hedge_coarse");
    auto cfg = base(dir);
    cfg["hedge.steps"] = 10;
    const auto res = run_command("hedge-replicate", cfg);
    CHECK(res.exit_code == kOk);
    CHECK(res.summary["report"]["converged"] == false);
    CHECK_FALSE(res.diagnostics.empty());
  }
}

TEST_CASE("parity command") {
  const auto dir = scratch("parity");
  auto cfg = base(dir);
  cfg["parity.strikes"] = json::array({0.5, 1.0, 2.0});
  cfg["parity.spots"] = json::array({0.5, 1.0, 2.0});
  auto res = run_command("parity", cfg);
  CHECK(res.exit_code == kOk);
  CHECK(res.summary["records"].size() == 9);
  for (const auto& r : res.summary["records"]) CHECK(std::abs(r["residual"].get<double>()) < 1e-10);

  FlatConfig rb{{"model", "reciprocal_bessel"}, {"output.dir", dir.string()}};
  res = run_command("parity", rb);
  CHECK(res.exit_code == kOk);
  const auto& rec = res.summary["records"][0];
  CHECK(rec["classical_gap"].get<double>() == doctest::Approx(1.0 - kP0).epsilon(1e-12));
  CHECK(rec["classical_violated"] == true);
}

TEST_CASE("report ladders decrease monotonically") {
  const auto dir = scratch("report");
  auto cfg = base(dir);
  cfg["grid.nt"] = 100;
  cfg["grid.ns"] = 100;
  const auto res = run_command("report", cfg);
  CHECK(res.exit_code == kOk);
  CHECK(res.summary["rows"].size() == 3);
  CHECK(res.summary["monotone"] == true);
  CHECK(fs::exists(dir / "report_pde.csv"));

  cfg["report.kind"] = "hedge";
  cfg["hedge.paths"] = 200;
  cfg["hedge.steps"] = 4000;
  const auto h = run_command("report", cfg);
  CHECK(h.exit_code == kOk);
  CHECK(h.summary["monotone"] == true);
}

TEST_CASE("validate-model") {
  const auto dir = scratch("validate");
  auto res = run_command("validate-model", base(dir));
  CHECK(res.exit_code == kOk);
  CHECK(res.summary["ok"] == true);
  CHECK(fs::exists(dir / "validate_model.json"));
  FlatConfig bad{{"model", "bessel_drift"}, {"model.S0", -1.0}, {"output.dir", dir.string()}};
  CHECK(run_command("validate-model", bad).exit_code == kValidation);
}

TEST_CASE("identical seed and config give identical files") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  for (const auto& dir : {a, b}) {
    auto cfg = base(dir);
    cfg["routes"] = "closed_form,pde,mc_p,mc_q";
    cfg["sim.paths"] = 3000;
    cfg["sim.seed"] = 77;
    REQUIRE(run_command("price", cfg).exit_code == kOk);
    cfg["hedge.paths"] = 100;
    cfg["hedge.steps"] = 500;
    REQUIRE(run_command("hedge-replicate", cfg).exit_code == kOk);
  }
  for (const char* f : {"price.json", "price.csv", "hedge_report.json", "hedge_paths.csv"}) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
}

TEST_CASE("binary exit codes") {
  const auto dir = scratch("binary");
  const std::string out = " --out " + dir.string();
  CHECK(run_binary("price --model bessel_drift c=0 S0=1 T=1 --payoff money_market --routes closed_form" + out) == 0);
  CHECK(run_binary("price --set bogus.key=1" + out) == 2);
  CHECK(run_binary("price --model gbm --payoff call strike=1 --routes closed_form" + out) == 2);
  CHECK(run_binary("frobnicate") == 2);
  CHECK(run_binary("parity --model reciprocal_bessel" + out) == 0);
  CHECK(fs::exists(dir / "parity.csv"));

  std::ofstream(dir / "run.json") << R"({"model": {"c": 0.5}, "payoff": "stock", "routes": "closed_form"})";
  CHECK(run_binary("price --config " + (dir / "run.json").string() + out) == 0);
  const auto summary = json::parse(slurp(dir / "price.json"));
  CHECK(summary["config"]["model.c"] == 0.5);
  CHECK(run_binary("price --config " + (dir / "missing.json").string() + out) == 2);
}
