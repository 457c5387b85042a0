#include "arbhedge/cli.hpp"
#include "arbhedge/errors.hpp"
#include "arbhedge/format.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::string> model;
  std::vector<std::string> payoff;
  std::string routes;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<std::size_t> steps;
  std::optional<unsigned> threads;
  std::string out;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file");
  sub->add_option("--set", f.sets, "dotted key=value override (repeatable)");
  sub->add_option("--model", f.model, "model name followed by key=value parameters")->expected(1, -1);
  sub->add_option("--payoff", f.payoff, "payoff kind followed by key=value parameters")->expected(1, -1);
  sub->add_option("--routes", f.routes, "closed_form,pde,mc_p,mc_q or all");
  sub->add_option("--seed", f.seed, "RNG seed");
  sub->add_option("--paths", f.paths, "Monte Carlo paths");
  sub->add_option("--steps", f.steps, "time steps");
  sub->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  sub->add_option("--out", f.out, "output directory");
}

void with_params(arbhedge::cli::FlatConfig& merged, const std::string& prefix, const std::vector<std::string>& words) {
  if (words.empty()) return;
  merged[prefix] = words.front();
  for (std::size_t i = 1; i < words.size(); ++i) {
    auto [k, v] = arbhedge::cli::parse_assignment(words[i]);
    merged[prefix + "." + k] = v;
  }
}

arbhedge::cli::FlatConfig merge(const Flags& f) {
  using namespace arbhedge::cli;
  FlatConfig merged;
  if (!f.config.empty()) merged = load_config_file(f.config);
  apply_environment(merged);
  for (const auto& s : f.sets) {
    auto [k, v] = parse_assignment(s);
    merged[k] = v;
  }
  with_params(merged, "model", f.model);
  with_params(merged, "payoff", f.payoff);
  if (!f.routes.empty()) merged["routes"] = f.routes;
  if (f.seed) merged["sim.seed"] = *f.seed;
  if (f.paths) merged["sim.paths"] = *f.paths;
  if (f.steps) merged["sim.steps"] = *f.steps;
  if (f.threads) merged["sim.threads"] = *f.threads;
  if (!f.out.empty()) merged["output.dir"] = f.out;
  return merged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"arbhedge: pricing and hedging without an equivalent local martingale measure"};
  app.require_subcommand(1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"price", "price a claim by one or more routes"},
      {"hedge-replicate", "simulate the optimal replicating strategy"},
      {"parity", "check the modified put-call parity"},
      {"report", "convergence ladder (report.kind = pde | mc | hedge)"},
      {"validate-model", "probe MPR existence and ellipticity"}};
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : arbhedge::cli::kValidation;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  arbhedge::cli::CommandResult res;
  try {
    res = arbhedge::cli::run_command(name, merge(flags));
  } catch (const arbhedge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return arbhedge::cli::kValidation;
  }
  if (!res.summary.is_null()) std::cout << res.summary.dump(2) << '\n';
  for (const auto& f : res.files) std::cout << "wrote " << f << '\n';
  for (const auto& [what, secs] : res.runtimes) std::cout << "runtime " << what << ' ' << arbhedge::format_double(secs) << " s\n";
  for (const auto& d : res.diagnostics) std::cerr << d << '\n';
  return res.exit_code;
}
