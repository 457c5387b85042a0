#pragma once

#include "arbhedge/closed_form.hpp"
#include "arbhedge/market_model.hpp"
#include "arbhedge/payoff.hpp"
#include "arbhedge/simulation.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace arbhedge::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kNumerical = 3, kRuntime = 4 };

// Flat dotted keys (model.c, sim.paths, ...) to JSON values. Nested objects in
// a config file are flattened; arrays stay values.
using FlatConfig = std::map<std::string, nlohmann::json>;

struct RunConfig {
  std::string model = "bessel_drift";
  std::map<std::string, double> model_params;
  std::map<std::string, std::vector<double>> model_arrays;
  std::string payoff = "money_market";
  std::map<std::string, double> payoff_params;
  std::vector<Route> routes{Route::closed_form};
  bool routes_all = false;
  SimConfig sim;
  std::size_t grid_nt = 400;
  std::size_t grid_ns = 400;
  std::optional<double> grid_s_max;
  std::optional<std::string> grid_lower;
  std::optional<std::string> grid_upper;
  double eval_t = 0.0;
  std::optional<double> eval_s;
  std::string output_dir = ".";
  bool write_json = true;
  bool write_csv = true;
  // hedge-replicate
  std::string hedge_source = "auto";  // auto | closed_form | pde
  std::size_t hedge_paths = 1000;
  std::size_t hedge_steps = 10000;
  // report
  std::string report_kind = "pde";  // pde | mc | hedge
  std::size_t report_levels = 3;
  // parity
  std::vector<double> parity_strikes{1.0};
  std::vector<double> parity_spots;
  std::string parity_route = "closed_form";

  FlatConfig echo;  // resolved configuration written into every output
};

FlatConfig flatten(const nlohmann::json& doc);
FlatConfig load_config_file(const std::string& path);
// Layering: defaults < file < --set overrides < dedicated flags (already merged by the caller).
RunConfig resolve(const FlatConfig& merged);
// "key=value" with the value parsed as JSON when possible, else kept as a string.
std::pair<std::string, nlohmann::json> parse_assignment(const std::string& text);
// ARBHEDGE_OUTPUT_DIR and ARBHEDGE_THREADS.
void apply_environment(FlatConfig& merged);

MarketModel build_model(const RunConfig& cfg);
Payoff build_payoff(const RunConfig& cfg);

struct CommandResult {
  int exit_code = kOk;
  nlohmann::json summary;
  std::vector<std::string> files;
  std::vector<std::string> diagnostics;
  std::vector<std::pair<std::string, double>> runtimes;  // stdout only
};

CommandResult cmd_price(const RunConfig& cfg);
CommandResult cmd_hedge_replicate(const RunConfig& cfg);
CommandResult cmd_parity(const RunConfig& cfg);
CommandResult cmd_report(const RunConfig& cfg);
CommandResult cmd_validate_model(const RunConfig& cfg);

// Dispatch by name, mapping exceptions to exit codes.
CommandResult run_command(const std::string& name, const FlatConfig& merged);

}  // namespace arbhedge::cli
