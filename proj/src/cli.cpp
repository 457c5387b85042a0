#include "arbhedge/cli.hpp"

#include "arbhedge/errors.hpp"
#include "arbhedge/format.hpp"
#include "arbhedge/hedging.hpp"
#include "arbhedge/pde.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

namespace arbhedge::cli {

using nlohmann::json;

namespace {

void flatten_into(const json& node, const std::string& prefix, FlatConfig& out) {
  if (node.is_object() && !(prefix.empty() && node.empty())) {
    for (auto it = node.begin(); it != node.end(); ++it)
      flatten_into(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    return;
  }
  if (prefix.empty()) throw ConfigError("config document must be an object");
  out[prefix] = node;
}

double as_double(const std::string& key, const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v.get<std::string>(), &pos);
      if (pos == v.get<std::string>().size()) return d;
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("config key '" + key + "' must be a number");
}

std::size_t as_size(const std::string& key, const json& v) {
  const double d = as_double(key, v);
  if (!(d >= 0.0) || d != std::floor(d) || d > 1e15) throw ConfigError("config key '" + key + "' must be a count");
  return static_cast<std::size_t>(d);
}

bool as_bool(const std::string& key, const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
  }
  if (v.is_number_integer()) return v.get<long long>() != 0;
  throw ConfigError("config key '" + key + "' must be a boolean");
}

std::string as_string(const std::string& key, const json& v) {
  if (v.is_string()) return v.get<std::string>();
  throw ConfigError("config key '" + key + "' must be a string");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::string> as_string_list(const std::string& key, const json& v) {
  if (v.is_string()) return split_list(v.get<std::string>());
  if (v.is_array()) {
    std::vector<std::string> out;
    for (const auto& e : v) out.push_back(as_string(key, e));
    return out;
  }
  throw ConfigError("config key '" + key + "' must be a list of names");
}

std::vector<double> as_double_list(const std::string& key, const json& v) {
  if (v.is_array()) {
    std::vector<double> out;
    for (const auto& e : v) out.push_back(as_double(key, e));
    return out;
  }
  if (v.is_string()) {
    std::vector<double> out;
    for (const auto& item : split_list(v.get<std::string>())) out.push_back(as_double(key, json(item)));
    return out;
  }
  return {as_double(key, v)};
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

FlatConfig to_flat(const RunConfig& c) {
  FlatConfig f;
  f["model"] = c.model;
  for (const auto& [k, v] : c.model_params) f["model." + k] = v;
  for (const auto& [k, v] : c.model_arrays) f["model." + k] = v;
  f["payoff"] = c.payoff;
  for (const auto& [k, v] : c.payoff_params) f["payoff." + k] = v;
  json routes = json::array();
  for (Route r : c.routes) routes.push_back(to_string(r));
  f["routes"] = c.routes_all ? json("all") : routes;
  f["sim.paths"] = c.sim.n_paths;
  f["sim.steps"] = c.sim.n_steps;
  f["sim.seed"] = c.sim.seed;
  f["sim.scheme"] = to_string(c.sim.scheme);
  f["sim.antithetic"] = c.sim.antithetic;
  f["sim.bridge_correction"] = c.sim.bridge_correction;
  f["grid.nt"] = c.grid_nt;
  f["grid.ns"] = c.grid_ns;
  if (c.grid_s_max) f["grid.s_max"] = *c.grid_s_max;
  if (c.grid_lower) f["grid.lower"] = *c.grid_lower;
  if (c.grid_upper) f["grid.upper"] = *c.grid_upper;
  f["eval.t"] = c.eval_t;
  if (c.eval_s) f["eval.s"] = *c.eval_s;
  json formats = json::array();
  if (c.write_json) formats.push_back("json");
  if (c.write_csv) formats.push_back("csv");
  f["output.formats"] = formats;
  f["hedge.source"] = c.hedge_source;
  f["hedge.paths"] = c.hedge_paths;
  f["hedge.steps"] = c.hedge_steps;
  f["report.kind"] = c.report_kind;
  f["report.levels"] = c.report_levels;
  f["parity.strikes"] = c.parity_strikes;
  f["parity.spots"] = c.parity_spots;
  f["parity.route"] = c.parity_route;
  // output.dir and sim.threads do not change results and stay out of the echo.
  return f;
}

json echo_json(const RunConfig& c) {
  json j = json::object();
  for (const auto& [k, v] : c.echo) j[k] = v;
  return j;
}

std::filesystem::path output_path(const RunConfig& c, const std::string& name) {
  std::filesystem::create_directories(c.output_dir);
  return std::filesystem::path(c.output_dir) / name;
}

void write_file(CommandResult& res, const RunConfig& c, const std::string& name, const std::string& content) {
  const auto path = output_path(c, name);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
  res.files.push_back(path.string());
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

json base_summary(const std::string& command, const RunConfig& cfg) {
  json j;
  j["schema"] = 1;
  j["command"] = command;
  j["config"] = echo_json(cfg);
  return j;
}

PdeGrid make_grid(const RunConfig& cfg, const MarketModel& model, std::size_t nt, std::size_t ns) {
  PdeGrid g = PdeGrid::for_model(model, nt, ns, cfg.grid_s_max);
  if (cfg.grid_lower) g.lower = parse_boundary_policy(*cfg.grid_lower);
  if (cfg.grid_upper) g.upper = parse_boundary_policy(*cfg.grid_upper);
  return g;
}

struct PdeQuote {
  PriceSurface surface;
  double value = 0.0;
  double error_estimate = 0.0;  // |v_h - v_2h|
  double tolerance = 0.0;
};

// Kinked payoffs converge non-monotonically at practical grids, so the band
// is three half-resolution gaps with a small relative floor.
PdeQuote pde_quote(const RunConfig& cfg, const MarketModel& model, const Payoff& payoff, double t, double s) {
  PdeQuote q{solve_pde(model, payoff, make_grid(cfg, model, cfg.grid_nt, cfg.grid_ns))};
  const auto coarse = solve_pde(model, payoff, make_grid(cfg, model, cfg.grid_nt / 2, cfg.grid_ns / 2));
  if (!q.surface.covers(t, s)) throw ConfigError("evaluation point outside the pde grid");
  q.value = q.surface.value_at(t, s);
  q.error_estimate = std::abs(q.value - coarse.value_at(t, s));
  q.tolerance = std::max(3.0 * q.error_estimate, 1e-4 * std::max(1.0, std::abs(q.value)));
  return q;
}

struct RouteValue {
  Route route = Route::closed_form;
  double value = 0.0;
  double tolerance = 0.0;  // half-width used by the consistency check
};

double eval_state(const RunConfig& cfg, const MarketModel& model) {
  if (model.dim() != 1 && cfg.eval_s) throw ConfigError("eval.s is only meaningful for d = 1 models");
  return cfg.eval_s.value_or(model.initial_state()(0));
}

// MC price at (t, s): from S0 at t = 0, else from the grid step matching t.
McPrice mc_price_at(const MarketModel& model, const MprField& mpr, const Payoff& payoff, SimConfig sc, McRoute route,
                    double t, std::optional<double> s) {
  if (t == 0.0 && (!s || *s == model.initial_state()(0))) return price_mc(model, mpr, payoff, sc, route);
  const double dt = sc.dt(model.horizon());
  const double k = std::round(t / dt);
  if (std::abs(k * dt - t) > 1e-9 * model.horizon())
    throw ConfigError("eval.t must lie on the simulation grid (multiple of T / sim.steps) for MC routes");
  sc.record_stride = sc.n_steps;
  Vector start = model.initial_state();
  if (s) start(0) = *s;
  const auto ens = simulate_from(model, mpr, sc, route == McRoute::under_p ? Measure::P : Measure::Q,
                                 static_cast<std::size_t>(k), start);
  return price_from_ensemble(ens, payoff);
}

}  // namespace

FlatConfig flatten(const json& doc) {
  FlatConfig out;
  flatten_into(doc, "", out);
  return out;
}

FlatConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return flatten(doc);
}

std::pair<std::string, json> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + text + "'");
  const std::string key = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  return {key, value};
}

void apply_environment(FlatConfig& merged) {
  if (const char* dir = std::getenv("ARBHEDGE_OUTPUT_DIR"); dir && *dir) merged["output.dir"] = std::string(dir);
  if (const char* th = std::getenv("ARBHEDGE_THREADS"); th && *th) merged["sim.threads"] = std::string(th);
}

RunConfig resolve(const FlatConfig& merged) {
  RunConfig c;
  for (const auto& [key, v] : merged) {
    if (key == "model") {
      c.model = as_string(key, v);
    } else if (starts_with(key, "model.")) {
      const std::string p = key.substr(6);
      if (v.is_array())
        c.model_arrays[p] = as_double_list(key, v);
      else
        c.model_params[p] = as_double(key, v);
    } else if (key == "payoff") {
      c.payoff = as_string(key, v);
    } else if (starts_with(key, "payoff.")) {
      c.payoff_params[key.substr(7)] = as_double(key, v);
    } else if (key == "routes") {
      const auto names = as_string_list(key, v);
      c.routes.clear();
      c.routes_all = names.size() == 1 && names[0] == "all";
      if (c.routes_all)
        c.routes = {Route::closed_form, Route::pde, Route::mc_p, Route::mc_q};
      else
        for (const auto& n : names) c.routes.push_back(parse_route(n));
    } else if (key == "sim.paths") {
      c.sim.n_paths = as_size(key, v);
    } else if (key == "sim.steps") {
      c.sim.n_steps = as_size(key, v);
    } else if (key == "sim.seed") {
      const double d = as_double(key, v);
      if (!(d >= 0.0) || d != std::floor(d)) throw ConfigError("sim.seed must be a nonnegative integer");
      c.sim.seed = v.is_number_unsigned() ? v.get<std::uint64_t>() : static_cast<std::uint64_t>(d);
    } else if (key == "sim.scheme") {
      c.sim.scheme = parse_scheme(as_string(key, v));
    } else if (key == "sim.antithetic") {
      c.sim.antithetic = as_bool(key, v);
    } else if (key == "sim.bridge_correction") {
      c.sim.bridge_correction = as_bool(key, v);
    } else if (key == "sim.threads") {
      c.sim.threads = static_cast<unsigned>(as_size(key, v));
    } else if (key == "grid.nt") {
      c.grid_nt = as_size(key, v);
    } else if (key == "grid.ns") {
      c.grid_ns = as_size(key, v);
    } else if (key == "grid.s_max") {
      c.grid_s_max = as_double(key, v);
    } else if (key == "grid.lower") {
      c.grid_lower = as_string(key, v);
      parse_boundary_policy(*c.grid_lower);
    } else if (key == "grid.upper") {
      c.grid_upper = as_string(key, v);
      parse_boundary_policy(*c.grid_upper);
    } else if (key == "eval.t") {
      c.eval_t = as_double(key, v);
    } else if (key == "eval.s") {
      c.eval_s = as_double(key, v);
    } else if (key == "output.dir") {
      c.output_dir = as_string(key, v);
    } else if (key == "output.formats") {
      c.write_json = c.write_csv = false;
      for (const auto& f : as_string_list(key, v)) {
        if (f == "json")
          c.write_json = true;
        else if (f == "csv")
          c.write_csv = true;
        else
          throw ConfigError("unknown output format '" + f + "'");
      }
    } else if (key == "hedge.source") {
      c.hedge_source = as_string(key, v);
      if (c.hedge_source != "auto" && c.hedge_source != "closed_form" && c.hedge_source != "pde")
        throw ConfigError("hedge.source must be auto, closed_form or pde");
    } else if (key == "hedge.paths") {
      c.hedge_paths = as_size(key, v);
    } else if (key == "hedge.steps") {
      c.hedge_steps = as_size(key, v);
    } else if (key == "report.kind") {
      c.report_kind = as_string(key, v);
      if (c.report_kind != "pde" && c.report_kind != "mc" && c.report_kind != "hedge")
        throw ConfigError("report.kind must be pde, mc or hedge");
    } else if (key == "report.levels") {
      c.report_levels = as_size(key, v);
      if (c.report_levels < 2) throw ConfigError("report.levels must be at least 2");
    } else if (key == "parity.strikes") {
      c.parity_strikes = as_double_list(key, v);
    } else if (key == "parity.spots") {
      c.parity_spots = as_double_list(key, v);
    } else if (key == "parity.route") {
      c.parity_route = as_string(key, v);
      parse_route(c.parity_route);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (c.routes.empty()) throw ConfigError("at least one route is required");
  c.sim.validate();
  if (c.grid_nt < 2 || c.grid_ns < 8) throw ConfigError("grid.nt >= 2 and grid.ns >= 8 required");
  build_model(c);
  build_payoff(c);
  c.echo = to_flat(c);
  return c;
}

MarketModel build_model(const RunConfig& cfg) { return make_model(cfg.model, cfg.model_params, cfg.model_arrays); }

Payoff build_payoff(const RunConfig& cfg) {
  const auto get = [&](const std::string& k, double fallback) {
    auto it = cfg.payoff_params.find(k);
    return it == cfg.payoff_params.end() ? fallback : it->second;
  };
  for (const auto& [k, v] : cfg.payoff_params) {
    (void)v;
    if (k != "strike" && k != "index") throw ConfigError("unknown payoff parameter '" + k + "'");
  }
  const int index = static_cast<int>(get("index", 0.0));
  if (cfg.payoff == "money_market") return Payoff::money_market();
  if (cfg.payoff == "stock") return Payoff::stock(index);
  if (cfg.payoff == "call") return Payoff::call(get("strike", 1.0), index);
  if (cfg.payoff == "put") return Payoff::put(get("strike", 1.0), index);
  if (cfg.payoff == "market_portfolio") return Payoff::market_portfolio();
  if (cfg.payoff == "zero") return Payoff::zero();
  throw ConfigError("unknown payoff '" + cfg.payoff + "'");
}

CommandResult cmd_price(const RunConfig& cfg) {
  CommandResult res;
  const MarketModel model = build_model(cfg);
  const Payoff payoff = build_payoff(cfg);
  const MprField mpr(model);
  const double t = cfg.eval_t;
  const double s = eval_state(cfg, model);

  json records = json::array();
  std::vector<RouteValue> values;
  for (Route route : cfg.routes) {
    json rec;
    rec["schema"] = 1;
    rec["model"] = model.name();
    rec["payoff"] = payoff.description();
    rec["t"] = t;
    rec["s"] = s;
    rec["route"] = to_string(route);
    Stopwatch sw;
    if (route == Route::closed_form) {
      if (!has_closed_form(model, payoff)) {
        if (cfg.routes_all) {
          res.diagnostics.push_back("closed_form: no formula for this model/payoff, skipped");
          continue;
        }
        throw ConfigError("no closed form for payoff " + payoff.description() + " in model " + model.name());
      }
      const auto cf = closed_form_price(model, payoff, t, s);
      rec["value"] = cf.value;
      rec["delta"] = cf.delta;
      rec["formula_id"] = std::string(cf.formula_id);
      rec["error_estimate"] = cf.error_estimate.value_or(0.0);
      values.push_back({route, cf.value, std::max(1e-10, 10.0 * cf.error_estimate.value_or(0.0))});
    } else if (route == Route::pde) {
      if (model.dim() != 1) {
        if (cfg.routes_all) {
          res.diagnostics.push_back("pde: d > 1 is experimental and not used by price, skipped");
          continue;
        }
        throw ConfigError("pde route needs a d = 1 model");
      }
      const auto q = pde_quote(cfg, model, payoff, t, s);
      const auto& sf = q.surface;
      const auto d = extract_delta_flagged(sf, t, s);
      rec["value"] = q.value;
      rec["delta"] = d.value;
      rec["delta_one_sided"] = d.one_sided;
      rec["error_estimate"] = q.error_estimate;
      rec["tolerance"] = q.tolerance;
      rec["grid"] = {{"nt", cfg.grid_nt}, {"ns", cfg.grid_ns}, {"s_max", sf.s.back()},
                     {"lower", to_string(sf.lower)}, {"upper", to_string(sf.upper)}};
      rec["residual_norm"] = sf.residual_norm;
      rec["clamped_nodes"] = sf.clamped;
      for (const auto& w : sf.warnings) res.diagnostics.push_back("pde: " + w);
      values.push_back({route, q.value, q.tolerance});
    } else {
      const McRoute mr = route == Route::mc_p ? McRoute::under_p : McRoute::under_q;
      const auto mc = mc_price_at(model, mpr, payoff, cfg.sim, mr, t, cfg.eval_s);
      rec["value"] = mc.estimate;
      rec["delta"] = nullptr;
      rec["std_error"] = mc.std_error;
      rec["error_estimate"] = mc.std_error;
      rec["n_paths"] = mc.n_paths;
      rec["n_effective"] = mc.n_effective;
      rec["seed"] = cfg.sim.seed;
      values.push_back({route, mc.estimate, 3.0 * mc.std_error});
    }
    res.runtimes.emplace_back(to_string(route), sw.seconds());
    records.push_back(rec);
  }

  json pairs = json::array();
  bool consistent = true;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = i + 1; j < values.size(); ++j) {
      const double gap = std::abs(values[i].value - values[j].value);
      const double tol = std::hypot(values[i].tolerance, values[j].tolerance) + 1e-8;
      const bool ok = gap <= tol;
      consistent = consistent && ok;
      pairs.push_back({{"a", to_string(values[i].route)}, {"b", to_string(values[j].route)}, {"gap", gap},
                       {"tolerance", tol}, {"consistent", ok}});
    }
  }
  json summary = base_summary("price", cfg);
  summary["records"] = records;
  summary["consistency"] = {{"consistent", consistent}, {"pairs", pairs}};
  res.summary = summary;
  if (!consistent) {
    res.exit_code = kNumerical;
    res.diagnostics.push_back("routes disagree beyond their combined tolerance");
  }
  if (cfg.write_json) write_file(res, cfg, "price.json", summary.dump(2) + "\n");
  if (cfg.write_csv) {
    std::ostringstream csv;
    csv << "route,value,delta,error_estimate\n";
    for (const auto& r : records) {
      csv << r["route"].get<std::string>() << ',' << format_double(r["value"].get<double>()) << ','
          << (r["delta"].is_null() ? std::string() : format_double(r["delta"].get<double>())) << ','
          << format_double(r["error_estimate"].get<double>()) << '\n';
    }
    write_file(res, cfg, "price.csv", csv.str());
  }
  return res;
}

namespace {

Strategy make_strategy(const RunConfig& cfg, const MarketModel& model, const Payoff& payoff, std::string& source) {
  source = cfg.hedge_source;
  if (source == "auto") source = has_closed_form(model, payoff) ? "closed_form" : "pde";
  if (source == "closed_form") return build_strategy(model, payoff);
  auto surface = std::make_shared<const PriceSurface>(
      solve_pde(model, payoff, make_grid(cfg, model, cfg.grid_nt, cfg.grid_ns)));
  return build_strategy(model, payoff, surface);
}

json replication_json(const ReplicationReport& rep) {
  json dw = json::array();
  for (std::size_t c = 0; c < rep.deflated_wealth.size(); ++c)
    dw.push_back({{"t", rep.checkpoint_times[c]}, {"mean", rep.deflated_wealth[c].mean},
                  {"se", rep.deflated_wealth[c].se}});
  return {{"strategy", rep.strategy},
          {"initial_capital", rep.initial_capital},
          {"naive_cost", number_or_null(rep.naive_cost)},
          {"savings", number_or_null(rep.savings)},
          {"n_paths", rep.n_paths},
          {"n_steps", rep.n_steps},
          {"median_rel_error", rep.median_rel_error},
          {"p95_rel_error", rep.p95_rel_error},
          {"median_abs_error", rep.median_abs_error},
          {"tracking_median", rep.tracking_median},
          {"tracking_max", rep.tracking_max},
          {"negative_wealth_paths", rep.negative_wealth_paths},
          {"extrapolated_queries", rep.extrapolated_queries},
          {"fraction_superreplicated_2pct", rep.fraction_superreplicated(0.02)},
          {"failed", rep.failed},
          {"converged", rep.converged},
          {"supermartingale", rep.supermartingale},
          {"supermartingale_paired", rep.supermartingale_paired},
          {"deflated_wealth", dw}};
}

}  // namespace

CommandResult cmd_hedge_replicate(const RunConfig& cfg) {
  CommandResult res;
  const MarketModel model = build_model(cfg);
  if (model.dim() != 1) throw ConfigError("hedge-replicate supports d = 1 models");
  const Payoff payoff = build_payoff(cfg);
  const MprField mpr(model);

  Stopwatch sw;
  std::string source;
  const Strategy strategy = make_strategy(cfg, model, payoff, source);
  res.runtimes.emplace_back("strategy", sw.seconds());

  SimConfig sc = cfg.sim;
  sc.n_paths = cfg.hedge_paths;
  sc.n_steps = cfg.hedge_steps;
  sc.record_stride = 1;
  sc.validate();
  Stopwatch sim_sw;
  const auto ens = simulate_p(model, mpr, sc);
  res.runtimes.emplace_back("simulate", sim_sw.seconds());

  Stopwatch rep_sw;
  ReplicateOptions ro;
  ro.threads = cfg.sim.threads;
  const auto rep = replicate(strategy, ens, payoff, ro);
  res.runtimes.emplace_back("replicate", rep_sw.seconds());

  json summary = base_summary("hedge-replicate", cfg);
  summary["model"] = model.name();
  summary["payoff"] = payoff.description();
  summary["source"] = source;
  summary["report"] = replication_json(rep);
  res.summary = summary;
  if (rep.failed) {
    res.exit_code = kNumerical;
    res.diagnostics.push_back("more than 1% of wealth paths went negative");
  }
  if (!rep.converged)
    res.diagnostics.push_back("replication not converged: median relative error " +
                              format_double(rep.median_rel_error) + " >= 0.02");
  if (cfg.write_json) write_file(res, cfg, "hedge_report.json", summary.dump(2) + "\n");
  if (cfg.write_csv) {
    std::ostringstream csv;
    write_replication_csv(rep, csv);
    write_file(res, cfg, "hedge_paths.csv", csv.str());
  }
  return res;
}

CommandResult cmd_parity(const RunConfig& cfg) {
  CommandResult res;
  const MarketModel model = build_model(cfg);
  if (model.dim() != 1) throw ConfigError("parity supports d = 1 models");
  const MprField mpr(model);
  const Route route = parse_route(cfg.parity_route);
  const double t = cfg.eval_t;
  std::vector<double> spots = cfg.parity_spots;
  if (spots.empty()) spots.push_back(model.initial_state_1d());
  if ((route == Route::mc_p || route == Route::mc_q) && (t != 0.0 || spots.size() != 1))
    throw ConfigError("mc parity runs at t = 0 from a single spot");

  auto quote = [&](const Payoff& p, double s) -> Quote {
    Quote q;
    q.route = route;
    if (route == Route::closed_form) {
      q.value = closed_form_price(model, p, t, s).value;
    } else if (route == Route::pde) {
      const auto pq = pde_quote(cfg, model, p, t, s);
      q.value = pq.value;
      q.tolerance = pq.tolerance;
    } else {
      SimConfig sc = cfg.sim;
      const auto mc = mc_price_at(model, mpr, p, sc, route == Route::mc_p ? McRoute::under_p : McRoute::under_q, t, s);
      q.value = mc.estimate;
      q.std_error = mc.std_error;
    }
    return q;
  };

  Stopwatch sw;
  json records = json::array();
  bool all_hold = true;
  std::ostringstream csv;
  csv << "t,s,strike,lhs,rhs,residual,tolerance,holds,classical_gap,classical_violated\n";
  for (double s : spots) {
    const Quote stock = quote(Payoff::stock(), s);
    const Quote money = quote(Payoff::money_market(), s);
    for (double L : cfg.parity_strikes) {
      const Quote put = quote(Payoff::put(L), s);
      const Quote call = quote(Payoff::call(L), s);
      const auto rep = put_call_parity(t, s, L, put, stock, call, money);
      all_hold = all_hold && rep.holds;
      records.push_back({{"schema", 1},
                         {"model", model.name()},
                         {"route", to_string(route)},
                         {"t", t},
                         {"s", s},
                         {"strike", L},
                         {"put", put.value},
                         {"call", call.value},
                         {"stock", stock.value},
                         {"money_market", money.value},
                         {"lhs", rep.lhs},
                         {"rhs", rep.rhs},
                         {"residual", rep.residual},
                         {"tolerance", rep.tolerance},
                         {"holds", rep.holds},
                         {"classical_gap", rep.classical_gap},
                         {"classical_violated", rep.classical_violated}});
      csv << format_double(t) << ',' << format_double(s) << ',' << format_double(L) << ',' << format_double(rep.lhs)
          << ',' << format_double(rep.rhs) << ',' << format_double(rep.residual) << ','
          << format_double(rep.tolerance) << ',' << (rep.holds ? 1 : 0) << ',' << format_double(rep.classical_gap)
          << ',' << (rep.classical_violated ? 1 : 0) << '\n';
    }
  }
  res.runtimes.emplace_back("parity", sw.seconds());
  json summary = base_summary("parity", cfg);
  summary["records"] = records;
  summary["all_hold"] = all_hold;
  res.summary = summary;
  if (!all_hold) {
    res.exit_code = kNumerical;
    res.diagnostics.push_back("modified put-call parity residual above tolerance");
  }
  if (cfg.write_json) write_file(res, cfg, "parity.json", summary.dump(2) + "\n");
  if (cfg.write_csv) write_file(res, cfg, "parity.csv", csv.str());
  return res;
}

CommandResult cmd_report(const RunConfig& cfg) {
  CommandResult res;
  const MarketModel model = build_model(cfg);
  if (model.dim() != 1) throw ConfigError("report supports d = 1 models");
  const Payoff payoff = build_payoff(cfg);
  const MprField mpr(model);
  const double t = cfg.eval_t;
  const double s = eval_state(cfg, model);
  const bool have_ref = has_closed_form(model, payoff);
  const double ref = have_ref ? closed_form_price(model, payoff, t, s).value : std::nan("");

  json rows = json::array();
  std::ostringstream csv;
  std::vector<double> errors;
  Stopwatch sw;
  if (cfg.report_kind == "pde") {
    csv << "level,n_t,n_s,value,error,order\n";
    std::vector<double> vals;
    for (std::size_t l = 0; l < cfg.report_levels; ++l) {
      const std::size_t f = std::size_t{1} << l;
      const auto sf = solve_pde(model, payoff, make_grid(cfg, model, cfg.grid_nt * f, cfg.grid_ns * f));
      vals.push_back(sf.value_at(t, s));
    }
    for (std::size_t l = 0; l < vals.size(); ++l) {
      // Without a closed form the finest level is the reference.
      const double e = have_ref ? std::abs(vals[l] - ref) : std::abs(vals[l] - vals.back());
      errors.push_back(e);
    }
    for (std::size_t l = 0; l < vals.size(); ++l) {
      const std::size_t f = std::size_t{1} << l;
      const double order = l > 0 && errors[l] > 0.0 ? std::log2(errors[l - 1] / errors[l]) : std::nan("");
      rows.push_back({{"level", l}, {"n_t", cfg.grid_nt * f}, {"n_s", cfg.grid_ns * f}, {"value", vals[l]},
                      {"error", errors[l]}, {"order", number_or_null(order)}});
      csv << l << ',' << cfg.grid_nt * f << ',' << cfg.grid_ns * f << ',' << format_double(vals[l]) << ','
          << format_double(errors[l]) << ',' << (std::isfinite(order) ? format_double(order) : "") << '\n';
    }
    if (!have_ref) errors.pop_back();
  } else if (cfg.report_kind == "mc") {
    if (!have_ref) throw ConfigError("mc report needs a closed-form reference");
    csv << "level,n_paths,route,value,std_error,error\n";
    for (std::size_t l = 0; l < cfg.report_levels; ++l) {
      SimConfig sc = cfg.sim;
      sc.n_paths = cfg.sim.n_paths << (2 * l);
      const auto route = cfg.routes.front() == Route::mc_q ? McRoute::under_q : McRoute::under_p;
      const auto mc = mc_price_at(model, mpr, payoff, sc, route, t, cfg.eval_s);
      const double e = std::abs(mc.estimate - ref);
      errors.push_back(mc.std_error);
      rows.push_back({{"level", l}, {"n_paths", sc.n_paths}, {"route", to_string(route)}, {"value", mc.estimate},
                      {"std_error", mc.std_error}, {"error", e}});
      csv << l << ',' << sc.n_paths << ',' << to_string(route) << ',' << format_double(mc.estimate) << ','
          << format_double(mc.std_error) << ',' << format_double(e) << '\n';
    }
  } else {
    std::string source;
    const Strategy strategy = make_strategy(cfg, model, payoff, source);
    SimConfig sc = cfg.sim;
    sc.n_paths = cfg.hedge_paths;
    sc.n_steps = cfg.hedge_steps;
    sc.record_stride = 1;
    const auto fine = simulate_p(model, mpr, sc);
    csv << "level,n_steps,median_rel_error,tracking_median,order\n";
    ReplicateOptions ro;
    ro.threads = cfg.sim.threads;
    std::vector<std::pair<std::size_t, ReplicationReport>> reps;
    for (std::size_t l = cfg.report_levels; l-- > 0;) {
      const std::size_t factor = std::size_t{1} << l;
      if (sc.n_steps % factor != 0) throw ConfigError("hedge.steps must be divisible by 2^(levels-1)");
      reps.emplace_back(sc.n_steps / factor, replicate(strategy, factor == 1 ? fine : fine.coarsen(factor), payoff, ro));
    }
    for (std::size_t l = 0; l < reps.size(); ++l) {
      const auto& [steps, rep] = reps[l];
      errors.push_back(rep.median_rel_error);
      const double order =
          l > 0 && rep.median_rel_error > 0.0 ? std::log2(errors[l - 1] / errors[l]) : std::nan("");
      rows.push_back({{"level", l}, {"n_steps", steps}, {"median_rel_error", rep.median_rel_error},
                      {"tracking_median", rep.tracking_median}, {"order", number_or_null(order)}});
      csv << l << ',' << steps << ',' << format_double(rep.median_rel_error) << ','
          << format_double(rep.tracking_median) << ',' << (std::isfinite(order) ? format_double(order) : "") << '\n';
    }
  }
  res.runtimes.emplace_back("report", sw.seconds());

  bool monotone = true;
  for (std::size_t i = 1; i < errors.size(); ++i) monotone = monotone && errors[i] < errors[i - 1];
  json summary = base_summary("report", cfg);
  summary["kind"] = cfg.report_kind;
  summary["reference"] = number_or_null(ref);
  summary["rows"] = rows;
  summary["monotone"] = monotone;
  res.summary = summary;
  if (!monotone) res.diagnostics.push_back("error ladder is not monotone");
  if (cfg.write_json) write_file(res, cfg, "report_" + cfg.report_kind + ".json", summary.dump(2) + "\n");
  if (cfg.write_csv) write_file(res, cfg, "report_" + cfg.report_kind + ".csv", csv.str());
  return res;
}

CommandResult cmd_validate_model(const RunConfig& cfg) {
  CommandResult res;
  const MarketModel model = build_model(cfg);
  const double horizon = model.horizon();
  std::vector<ProbePoint> probes;
  for (double tf : {0.0, 0.5}) {
    for (double m : {0.75, 1.0, 1.5}) {
      ProbePoint p;
      p.t = tf * horizon;
      p.s = model.initial_state() * m;
      probes.push_back(p);
    }
  }
  Stopwatch sw;
  const auto rep = validate_model(model, probes);
  res.runtimes.emplace_back("validate", sw.seconds());

  json pj = json::array();
  for (const auto& p : rep.probes) {
    pj.push_back({{"t", p.t},
                  {"s", std::vector<double>(p.s.data(), p.s.data() + p.s.size())},
                  {"in_support", p.in_support},
                  {"mpr_residual", number_or_null(p.mpr_residual)},
                  {"theta_norm", number_or_null(p.theta_norm)},
                  {"min_eig_covariance", number_or_null(p.min_eig_covariance)},
                  {"min_eig_diffusion", number_or_null(p.min_eig_diffusion)},
                  {"lipschitz_theta", number_or_null(p.lipschitz_theta)},
                  {"lipschitz_sigma", number_or_null(p.lipschitz_sigma)},
                  {"mpr_inconsistent", p.mpr_inconsistent},
                  {"degenerate", p.degenerate},
                  {"non_finite", p.non_finite}});
  }
  json summary = base_summary("validate-model", cfg);
  summary["model"] = model.name();
  summary["probes"] = pj;
  summary["mpr_inconsistent"] = rep.mpr_inconsistent;
  summary["degenerate"] = rep.degenerate;
  summary["non_finite"] = rep.non_finite;
  summary["outside_support"] = rep.outside_support;
  summary["ok"] = rep.ok();
  res.summary = summary;
  if (!rep.ok()) {
    res.exit_code = kValidation;
    res.diagnostics.push_back("model validation failed");
  }
  if (cfg.write_json) write_file(res, cfg, "validate_model.json", summary.dump(2) + "\n");
  return res;
}

CommandResult run_command(const std::string& name, const FlatConfig& merged) {
  CommandResult res;
  try {
    const RunConfig cfg = resolve(merged);
    if (name == "price") return cmd_price(cfg);
    if (name == "hedge-replicate") return cmd_hedge_replicate(cfg);
    if (name == "parity") return cmd_parity(cfg);
    if (name == "report") return cmd_report(cfg);
    if (name == "validate-model") return cmd_validate_model(cfg);
    throw ConfigError("unknown command '" + name + "'");
  } catch (const ConfigError& e) {
    res.exit_code = kValidation;
    res.diagnostics.push_back(std::string("config error: ") + e.what());
  } catch (const std::domain_error& e) {
    res.exit_code = kValidation;
    res.diagnostics.push_back(std::string("validation error: ") + e.what());
  } catch (const NumericalError& e) {
    res.exit_code = kNumerical;
    res.diagnostics.push_back(std::string("numerical error: ") + e.what());
  } catch (const std::exception& e) {
    res.exit_code = kRuntime;
    res.diagnostics.push_back(std::string("runtime error: ") + e.what());
  }
  return res;
}

}  // namespace arbhedge::cli
