#pragma once

#include "arbhedge/market_model.hpp"
#include "arbhedge/payoff.hpp"

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace arbhedge {

enum class BoundaryPolicy { dirichlet_zero, dirichlet_payoff_extrapolation, neumann_flat };

std::string to_string(BoundaryPolicy p);
BoundaryPolicy parse_boundary_policy(const std::string& name);

// d = 1 grid. Unset policies resolve from the model and payoff.
struct PdeGrid {
  std::vector<double> t_nodes;
  std::vector<double> s_nodes;
  std::optional<BoundaryPolicy> lower;
  std::optional<BoundaryPolicy> upper;
  // Fully implicit half steps at the start of the backward sweep (two intervals).
  int rannacher_steps = 4;

  static PdeGrid uniform(double horizon, std::size_t n_t, double s_min, double s_max, std::size_t n_s);
  // sinh-stretched nodes clustered around `center` with width alpha.
  static PdeGrid stretched(double horizon, std::size_t n_t, double s_min, double s_max, std::size_t n_s,
                           double center, double alpha);
  // s in [0, s_max] with s_max = S0 + 8 sqrt(s^2 a(0, S0)) sqrt(T) unless given.
  // The reciprocal Bessel model gets a stretched grid out to
  // 100 max(S0, 1/sqrt(T)) instead, since its s^4 far field carries mass.
  static PdeGrid for_model(const MarketModel& model, std::size_t n_t, std::size_t n_s,
                           std::optional<double> s_max = std::nullopt);
};

BoundaryPolicy default_lower_policy(const MarketModel& model);
BoundaryPolicy default_upper_policy(const MarketModel& model, const Payoff& payoff);

class PriceSurface {
 public:
  std::vector<double> t;
  std::vector<double> s;
  std::vector<double> values;   // [k][j]
  std::vector<char> mask;       // in support
  std::vector<double> ghost;    // lower boundary position per layer
  std::vector<std::size_t> first;  // first regular interior node per layer
  BoundaryPolicy lower = BoundaryPolicy::dirichlet_zero;
  BoundaryPolicy upper = BoundaryPolicy::neumann_flat;
  std::size_t startup_intervals = 0;  // intervals not stepped with Crank-Nicolson
  std::size_t clamped = 0;
  double residual_norm = 0.0;
  std::vector<std::string> warnings;

  std::size_t n_t() const { return t.size(); }
  std::size_t n_s() const { return s.size(); }
  double at(std::size_t k, std::size_t j) const { return values[k * s.size() + j]; }
  double& at(std::size_t k, std::size_t j) { return values[k * s.size() + j]; }
  bool masked(std::size_t k, std::size_t j) const { return mask[k * s.size() + j] != 0; }

  // Bilinear interpolation; zero below the lower boundary.
  double value_at(double t, double s) const;
  bool covers(double t, double s) const;
};

PriceSurface solve_pde(const MarketModel& model, const Payoff& payoff, const PdeGrid& grid);

struct DeltaEstimate {
  double value = 0.0;
  bool one_sided = false;
};

// Derivative of the local quadratic through the nearest nodes, linear in t.
DeltaEstimate extract_delta_flagged(const PriceSurface& surface, double t, double s);
double extract_delta(const PriceSurface& surface, double t, double s);

struct ResidualWindow {
  double t_min = -1e300, t_max = 1e300;
  double s_min = -1e300, s_max = 1e300;
};

struct ResidualReport {
  double max_abs = 0.0;
  double mean_abs = 0.0;
  std::size_t nodes = 0;
};

// Crank-Nicolson residual of the surface on interior nodes whose stencil is
// regular on both layers; startup intervals are skipped.
ResidualReport residual_check(const PriceSurface& surface, const MarketModel& model,
                              const ResidualWindow& window = {});

// Fill a surface with f(t, s) on masked nodes (zero elsewhere).
PriceSurface sample_surface(const MarketModel& model, const PdeGrid& grid,
                            const std::function<double(double, double)>& f);

// t,s,value,delta on masked nodes.
void write_surface_csv(const PriceSurface& surface, std::ostream& out);

// Experimental d = 2 Douglas ADI with explicit cross term on a tensor grid.
// The normal diffusion must vanish on the s_i = 0 faces (GBM-type models), so
// those nodes are solved like interior ones; upper faces use the configured policy.
struct PdeGrid2d {
  std::vector<double> t_nodes;
  std::vector<double> s1_nodes;
  std::vector<double> s2_nodes;
  BoundaryPolicy upper = BoundaryPolicy::dirichlet_payoff_extrapolation;
  double theta = 0.5;
};

struct PriceSurface2d {
  std::vector<double> s1, s2;
  std::vector<double> values;  // time zero layer, [i][j]
  double at(std::size_t i, std::size_t j) const { return values[i * s2.size() + j]; }
  double value_at(double s1, double s2) const;
};

PriceSurface2d solve_pde_2d_experimental(const MarketModel& model, const Payoff& payoff, const PdeGrid2d& grid);

}  // namespace arbhedge
