#pragma once

#include "arbhedge/market_model.hpp"
#include "arbhedge/payoff.hpp"
#include "arbhedge/stats.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace arbhedge {

enum class Measure { P, Q };

// automatic picks the catalogue default: exact_bessel for the Bessel family
// where available, implicit_bessel for the drifted Bessel under P, euler_log
// otherwise.
enum class Scheme { automatic, euler_log, euler_direct, exact_bessel, implicit_bessel };

std::string to_string(Measure m);
std::string to_string(Scheme s);
Scheme parse_scheme(const std::string& name);

struct SimConfig {
  std::size_t n_paths = 10000;
  std::size_t n_steps = 100;
  Scheme scheme = Scheme::automatic;
  std::uint64_t seed = 20100503;
  bool bridge_correction = true;
  bool antithetic = false;
  // Record every k-th grid time; the terminal time is always recorded.
  std::size_t record_stride = 1;
  bool keep_increments = false;
  unsigned threads = 0;  // 0 = hardware concurrency
  double max_rejection_rate = 0.01;

  double dt(double horizon) const { return horizon / static_cast<double>(n_steps); }
  void validate() const;
};

struct PathEnsemble {
  Measure measure = Measure::P;
  Scheme scheme = Scheme::automatic;
  bool antithetic = false;  // paths 2i, 2i+1 share negated noise
  int d = 1;
  std::size_t n_paths = 0;
  std::vector<double> times;       // recorded grid times
  std::vector<std::size_t> steps;  // grid index of each recorded time
  std::vector<double> states;      // [path][time][dim]
  // Z under P; 1/Z under Q (zero once absorbed).
  std::vector<double> deflator;    // [path][time]
  std::vector<std::optional<double>> absorbed_at;
  std::size_t noise_dim = 0;
  std::vector<double> increments;  // [path][step][noise_dim] when kept

  std::size_t rejected_paths = 0;
  std::size_t capped_paths = 0;
  bool approximate_absorption = false;

  std::size_t n_times() const { return times.size(); }
  double state(std::size_t path, std::size_t k, int i = 0) const {
    return states[(path * n_times() + k) * static_cast<std::size_t>(d) + static_cast<std::size_t>(i)];
  }
  std::span<const double> state_vector(std::size_t path, std::size_t k) const {
    return {states.data() + (path * n_times() + k) * static_cast<std::size_t>(d), static_cast<std::size_t>(d)};
  }
  double deflator_at(std::size_t path, std::size_t k) const { return deflator[path * n_times() + k]; }
  bool alive(std::size_t path, std::size_t k) const {
    return !absorbed_at[path] || *absorbed_at[path] > times[k];
  }
  std::size_t absorbed_count() const;
  // Keep every factor-th recorded time (the last one must be kept exactly).
  PathEnsemble coarsen(std::size_t factor) const;
};

// Paths of (S, Z) under P started at (0, S0).
PathEnsemble simulate_p(const MarketModel& model, const MprField& mpr, const SimConfig& cfg);
// Paths of (S, 1/Z) under Q with absorption at the first zero of 1/Z.
PathEnsemble simulate_q(const MarketModel& model, const MprField& mpr, const SimConfig& cfg);
// Common-noise variant: start at grid step start_step from state s. Draws
// before start_step are consumed and discarded so increments line up with
// ensembles started earlier. Z is normalised to 1 at the start.
PathEnsemble simulate_from(const MarketModel& model, const MprField& mpr, const SimConfig& cfg, Measure measure,
                           std::size_t start_step, const Vector& start_state);

struct McPrice {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t n_effective = 0;
  std::size_t n_paths = 0;
};

enum class McRoute { under_p, under_q };
std::string to_string(McRoute r);

// under_p: mean of Z(T) p(S(T)); under_q: mean of p(S(T)) 1{not absorbed}.
McPrice price_mc(const MarketModel& model, const MprField& mpr, const Payoff& payoff, const SimConfig& cfg,
                 McRoute route);
McPrice price_from_ensemble(const PathEnsemble& ensemble, const Payoff& payoff);

struct ComparisonReport {
  MeanSe z_theta;        // E[Z^theta(T)], theta = 0
  MeanSe z_nu;           // E[Z^nu(T)] through the identity Z^nu = nu_2
  MeanSe z_nu_stepped;   // same, but Z^nu stepped with sdf_increment
  double expected_nu = 0.0;  // 2 Phi(1/sqrt(T)) - 1
  bool ordering_holds = false;
};

// Two-driver market d = 1, K = 2, mu = 0, sigma = (1, 0); theta = 0 versus the
// non-Markovian nu = (0, nu_2) with nu_2 the reciprocal 3d Bessel process.
ComparisonReport compare_mprs(const SimConfig& cfg, double horizon = 1.0);

struct FlowProbeEntry {
  double t = 0.0;
  Vector s;
  double start_distance = 0.0;  // |(t_k, s_k) - (t, s)|
  MeanSe sup_distance;          // mean over paths of sup_u |X^k(u) - X(u)|
};

struct FlowProbeReport {
  std::vector<FlowProbeEntry> entries;  // sorted by decreasing start distance
  bool monotone = true;
};

struct StartPoint {
  double t = 0.0;
  Vector s;
};

// Sup-norm distances between (S, Z~) paths started at nearby points under
// common noise. Start times are snapped to the simulation grid.
FlowProbeReport flow_continuity_probe(const MarketModel& model, const MprField& mpr, const SimConfig& cfg,
                                      const StartPoint& base, const std::vector<StartPoint>& perturbations);

// Mean over paths of f(path, k) at every recorded time, with standard errors.
std::vector<MeanSe> ensemble_time_means(const PathEnsemble& ensemble,
                                        const std::function<double(std::size_t, std::size_t)>& f);

// Columnar export: path_id,time,S_1..S_d,deflator,absorbed
void write_ensemble_csv(const PathEnsemble& ensemble, std::ostream& out);

}  // namespace arbhedge
