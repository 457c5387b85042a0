#include "arbhedge/pde.hpp"

#include "arbhedge/errors.hpp"
#include "arbhedge/format.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace arbhedge {

std::string to_string(BoundaryPolicy p) {
  switch (p) {
    case BoundaryPolicy::dirichlet_zero:
      return "dirichlet_zero";
    case BoundaryPolicy::dirichlet_payoff_extrapolation:
      return "dirichlet_payoff_extrapolation";
    case BoundaryPolicy::neumann_flat:
      return "neumann_flat";
  }
  return "?";
}

BoundaryPolicy parse_boundary_policy(const std::string& name) {
  if (name == "dirichlet_zero") return BoundaryPolicy::dirichlet_zero;
  if (name == "dirichlet_payoff_extrapolation") return BoundaryPolicy::dirichlet_payoff_extrapolation;
  if (name == "neumann_flat") return BoundaryPolicy::neumann_flat;
  throw ConfigError("unknown boundary policy: " + name);
}

PdeGrid PdeGrid::uniform(double horizon, std::size_t n_t, double s_min, double s_max, std::size_t n_s) {
  if (!(horizon > 0.0) || n_t < 1 || n_s < 4 || !(s_max > s_min))
    throw ConfigError("pde grid: need T > 0, n_t >= 1, n_s >= 4, s_max > s_min");
  PdeGrid g;
  g.t_nodes.resize(n_t + 1);
  g.s_nodes.resize(n_s + 1);
  for (std::size_t k = 0; k <= n_t; ++k) g.t_nodes[k] = horizon * static_cast<double>(k) / static_cast<double>(n_t);
  g.t_nodes.back() = horizon;
  for (std::size_t j = 0; j <= n_s; ++j)
    g.s_nodes[j] = s_min + (s_max - s_min) * static_cast<double>(j) / static_cast<double>(n_s);
  g.s_nodes.back() = s_max;
  return g;
}

PdeGrid PdeGrid::stretched(double horizon, std::size_t n_t, double s_min, double s_max, std::size_t n_s,
                           double center, double alpha) {
  if (!(alpha > 0.0) || !(center >= s_min) || !(center <= s_max)) throw ConfigError("stretched grid: bad center/alpha");
  PdeGrid g = uniform(horizon, n_t, s_min, s_max, n_s);
  const double c1 = std::asinh((s_min - center) / alpha);
  const double c2 = std::asinh((s_max - center) / alpha);
  for (std::size_t j = 1; j < n_s; ++j) {
    const double xi = static_cast<double>(j) / static_cast<double>(n_s);
    g.s_nodes[j] = center + alpha * std::sinh(c1 * (1.0 - xi) + c2 * xi);
  }
  return g;
}

PdeGrid PdeGrid::for_model(const MarketModel& model, std::size_t n_t, std::size_t n_s, std::optional<double> s_max) {
  if (model.dim() != 1) throw ConfigError("pde grid: d = 1 only (see the experimental 2d solver)");
  const double s0 = model.initial_state_1d();
  if (model.kind() == ModelKind::reciprocal_bessel && !s_max) {
    const double top = 100.0 * std::max(s0, 1.0 / std::sqrt(model.horizon()));
    return stretched(model.horizon(), n_t, 0.0, top, n_s, s0, 0.5 * s0);
  }
  const double top = s_max ? *s_max : s0 + 8.0 * std::sqrt(model.diffusion_1d(0.0, s0)) * std::sqrt(model.horizon());
  return uniform(model.horizon(), n_t, 0.0, top, n_s);
}

BoundaryPolicy default_lower_policy(const MarketModel& model) {
  return model.kind() == ModelKind::bessel_drift ? BoundaryPolicy::dirichlet_zero
                                                 : BoundaryPolicy::dirichlet_payoff_extrapolation;
}

BoundaryPolicy default_upper_policy(const MarketModel& model, const Payoff& payoff) {
  // h(t, s) = s also solves the reciprocal Bessel equation; a flat far field keeps the minimal one.
  if (model.kind() == ModelKind::reciprocal_bessel) return BoundaryPolicy::neumann_flat;
  return payoff.growth() == Growth::bounded ? BoundaryPolicy::neumann_flat
                                            : BoundaryPolicy::dirichlet_payoff_extrapolation;
}

namespace {

std::size_t bracket(const std::vector<double>& x, double v) {
  if (v <= x.front()) return 0;
  if (v >= x.back()) return x.size() - 2;
  auto it = std::upper_bound(x.begin(), x.end(), v);
  return static_cast<std::size_t>(it - x.begin()) - 1;
}

// Derivative at x of the quadratic through (x0,y0),(x1,y1),(x2,y2).
double quad_derivative(double x, double x0, double y0, double x1, double y1, double x2, double y2) {
  const double d0 = ((x - x1) + (x - x2)) / ((x0 - x1) * (x0 - x2));
  const double d1 = ((x - x0) + (x - x2)) / ((x1 - x0) * (x1 - x2));
  const double d2 = ((x - x0) + (x - x1)) / ((x2 - x0) * (x2 - x1));
  return y0 * d0 + y1 * d1 + y2 * d2;
}

double quad_value(double x, double x0, double y0, double x1, double y1, double x2, double y2) {
  const double l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2));
  const double l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2));
  const double l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
  return y0 * l0 + y1 * l1 + y2 * l2;
}

// Unknown layout of one time layer.
struct Layout {
  double t = 0.0;
  double ghost = 0.0;       // position of the lower Dirichlet point
  double ghost_value = 0.0;
  std::size_t lo = 0;       // first unknown
  std::size_t hi = 0;       // last unknown (inclusive)
  bool upper_known = false; // node N carries a Dirichlet value
  double upper_value = 0.0;
  bool lower_neumann = false;
};

struct Solver {
  const MarketModel& model;
  const Payoff& payoff;
  const std::vector<double>& s;
  BoundaryPolicy lower;
  BoundaryPolicy upper;
  std::size_t n;  // index of the last node

  Layout layout(double t) const {
    Layout L;
    L.t = t;
    if (lower == BoundaryPolicy::dirichlet_zero) {
      const double b = std::max(model.lower_boundary(t), s.front());
      L.ghost = b;
      L.ghost_value = 0.0;
      std::size_t j = 0;
      while (j < n && s[j] <= b) ++j;
      // A node hugging the boundary is dropped; its neighbour sees the ghost.
      const double h = s[std::min(j + 1, n)] - s[j];
      const bool on_node = j > 0 && std::abs(s[j - 1] - b) <= 1e-12 * h;
      if (!on_node && s[j] - b < 0.1 * h) ++j;
      L.lo = j;
    } else if (lower == BoundaryPolicy::dirichlet_payoff_extrapolation) {
      L.ghost = s.front();
      L.ghost_value = payoff(s.front());
      L.lo = 1;
    } else {
      L.ghost = s.front();
      L.lower_neumann = true;
      L.lo = 0;
    }
    if (upper == BoundaryPolicy::neumann_flat) {
      L.hi = n;
    } else {
      L.upper_known = true;
      L.upper_value = upper == BoundaryPolicy::dirichlet_zero ? 0.0 : payoff(s[n]);
      L.hi = n - 1;
    }
    if (L.lo + 2 > L.hi) throw ConfigError("pde grid: fewer than three unknowns above the boundary");
    return L;
  }

  // Smooth extension of a solved layer to positions left of its first unknown.
  double extend(const std::vector<double>& v, const Layout& L, double x) const {
    if (lower != BoundaryPolicy::dirichlet_zero) return x <= L.ghost ? L.ghost_value : v[bracket(s, x)];
    if (x == L.ghost) return 0.0;
    const std::size_t a = L.lo;
    return quad_value(x, L.ghost, 0.0, s[a], v[a], s[a + 1], v[a + 1]);
  }

  double left_pos(const Layout& L, std::size_t j) const { return j == L.lo ? L.ghost : s[j - 1]; }

  // One theta step from layer (vin, La) at time ta back to time tb.
  std::vector<double> step(const std::vector<double>& vin, const Layout& La, const Layout& Lb, double theta) const {
    const double dt = La.t - Lb.t;
    const std::size_t m = Lb.hi - Lb.lo + 1;
    std::vector<double> lower_d(m, 0.0), diag(m, 1.0), upper_d(m, 0.0), rhs(m, 0.0);

    auto value_a = [&](std::size_t j) {
      if (j < La.lo) return extend(vin, La, s[j]);
      return vin[j];
    };

    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t j = Lb.lo + r;
      if (Lb.lower_neumann && j == 0) {
        diag[r] = 1.0;
        upper_d[r] = -1.0;
        rhs[r] = 0.0;
        continue;
      }
      if (j == n) {  // neumann_flat upper row
        diag[r] = 1.0;
        lower_d[r] = -1.0;
        rhs[r] = 0.0;
        continue;
      }
      const double xl = left_pos(Lb, j);
      const double dl = s[j] - xl;
      const double dr = s[j + 1] - s[j];
      const double wl = 1.0 / (dl * (dl + dr));
      const double wr = 1.0 / (dr * (dl + dr));
      const double a_exp = model.diffusion_1d(La.t, s[j]);
      const double a_imp = model.diffusion_1d(Lb.t, s[j]);

      // Explicit half on the previous layer, including the ghost position.
      const double hl = j == Lb.lo ? (Lb.lower_neumann ? value_a(j) : extend_left(vin, La, xl)) : value_a(j - 1);
      const double hj = value_a(j);
      const double hr = (j + 1 == n && La.upper_known) ? La.upper_value : value_a(j + 1);
      rhs[r] = hj + (1.0 - theta) * dt * a_exp * (wl * hl - (wl + wr) * hj + wr * hr);

      const double cl = theta * dt * a_imp * wl;
      const double cr = theta * dt * a_imp * wr;
      diag[r] = 1.0 + cl + cr;
      if (j == Lb.lo) {
        rhs[r] += cl * Lb.ghost_value;
      } else {
        lower_d[r] = -cl;
      }
      if (j + 1 == n && Lb.upper_known) {
        rhs[r] += cr * Lb.upper_value;
      } else {
        upper_d[r] = -cr;
      }
    }

    // Thomas algorithm.
    for (std::size_t r = 1; r < m; ++r) {
      const double w = lower_d[r] / diag[r - 1];
      diag[r] -= w * upper_d[r - 1];
      rhs[r] -= w * rhs[r - 1];
    }
    std::vector<double> out(n + 1, 0.0);
    out[Lb.hi] = rhs[m - 1] / diag[m - 1];
    for (std::size_t r = m - 1; r-- > 0;) {
      const std::size_t j = Lb.lo + r;
      out[j] = (rhs[r] - upper_d[r] * out[j + 1]) / diag[r];
    }
    fill_known(out, Lb);
    return out;
  }

  // Value of the previous layer at the current ghost position.
  double extend_left(const std::vector<double>& v, const Layout& La, double x) const {
    if (lower != BoundaryPolicy::dirichlet_zero) return La.ghost_value;
    return extend(v, La, x);
  }

  void fill_known(std::vector<double>& v, const Layout& L) const {
    if (L.upper_known) v[n] = L.upper_value;
    if (lower == BoundaryPolicy::dirichlet_payoff_extrapolation) {
      v[0] = L.ghost_value;
    } else if (lower == BoundaryPolicy::dirichlet_zero) {
      for (std::size_t j = 0; j < L.lo; ++j) {
        if (s[j] <= L.ghost) {
          v[j] = 0.0;
        } else {
          v[j] = std::max(0.0, quad_value(s[j], L.ghost, 0.0, s[L.lo], v[L.lo], s[L.lo + 1], v[L.lo + 1]));
        }
      }
    }
  }
};

std::size_t first_regular(const Layout& L, const std::vector<double>& s) {
  if (L.lo == 0) return 1;
  return std::abs(s[L.lo - 1] - L.ghost) <= 1e-12 * (s[L.lo] - s[L.lo - 1]) ? L.lo : L.lo + 1;
}

void check_grid(const PdeGrid& grid) {
  const auto increasing = [](const std::vector<double>& x) {
    for (std::size_t i = 1; i < x.size(); ++i)
      if (!(x[i] > x[i - 1])) return false;
    return true;
  };
  if (grid.t_nodes.size() < 2 || grid.s_nodes.size() < 5) throw ConfigError("pde grid too small");
  if (!increasing(grid.t_nodes) || !increasing(grid.s_nodes)) throw ConfigError("pde grid nodes must increase");
  if (grid.rannacher_steps < 0 || grid.rannacher_steps % 2 != 0)
    throw ConfigError("rannacher_steps must be a nonnegative even number");
}

}  // namespace

PriceSurface solve_pde(const MarketModel& model, const Payoff& payoff, const PdeGrid& grid) {
  if (model.dim() != 1) throw ConfigError("solve_pde: d = 1 only (see the experimental 2d solver)");
  check_grid(grid);
  const auto& s = grid.s_nodes;
  const auto& t = grid.t_nodes;
  if (t.front() < 0.0 || std::abs(t.back() - model.horizon()) > 1e-12 * model.horizon())
    throw ConfigError("pde grid must end at the model horizon");
  if (s.front() < 0.0) throw ConfigError("pde grid: s nodes must be nonnegative");

  const std::size_t n = s.size() - 1;
  const std::size_t m = t.size() - 1;
  Solver solver{model, payoff, s, grid.lower.value_or(default_lower_policy(model)),
                grid.upper.value_or(default_upper_policy(model, payoff)), n};

  PriceSurface sf;
  sf.t = t;
  sf.s = s;
  sf.lower = solver.lower;
  sf.upper = solver.upper;
  sf.values.assign(t.size() * s.size(), 0.0);
  sf.mask.assign(t.size() * s.size(), 0);
  sf.ghost.assign(t.size(), 0.0);
  sf.first.assign(t.size(), 1);

  std::vector<Layout> layouts(t.size());
  for (std::size_t k = 0; k <= m; ++k) {
    layouts[k] = solver.layout(t[k]);
    sf.ghost[k] = layouts[k].ghost;
    sf.first[k] = first_regular(layouts[k], s);
    for (std::size_t j = 0; j <= n; ++j) sf.mask[k * s.size() + j] = model.in_support(t[k], s[j]) ? 1 : 0;
  }

  // Terminal layer: payoff on the closed support.
  std::vector<double> v(n + 1, 0.0);
  double bound = 0.0;
  const double b_t = model.lower_boundary(t[m]);
  for (std::size_t j = 0; j <= n; ++j) {
    const bool inside = solver.lower != BoundaryPolicy::dirichlet_zero || s[j] > b_t;
    v[j] = inside ? payoff(s[j]) : 0.0;
    bound = std::max(bound, v[j]);
  }
  if (solver.upper == BoundaryPolicy::dirichlet_payoff_extrapolation) bound = std::max(bound, payoff(s[n]));
  const double limit = 10.0 * bound + 1e-12;
  for (std::size_t j = 0; j <= n; ++j) sf.at(m, j) = v[j];

  const std::size_t startup = std::min<std::size_t>(static_cast<std::size_t>(grid.rannacher_steps / 2), m);
  sf.startup_intervals = startup;
  std::size_t masked_total = 0;

  for (std::size_t k = m; k-- > 0;) {
    const std::size_t done = m - 1 - k;
    if (done < startup) {
      const Layout mid = solver.layout(0.5 * (t[k] + t[k + 1]));
      v = solver.step(v, layouts[k + 1], mid, 1.0);
      v = solver.step(v, mid, layouts[k], 1.0);
    } else {
      v = solver.step(v, layouts[k + 1], layouts[k], 0.5);
    }
    for (std::size_t j = 0; j <= n; ++j) {
      if (!std::isfinite(v[j]) || v[j] > limit)
        throw NumericalError("pde instability at t=" + format_double(t[k]) + ", s=" + format_double(s[j]) +
                             ": value " + format_double(v[j]) + " (payoff bound " + format_double(bound) + ")");
      if (sf.masked(k, j)) {
        ++masked_total;
        if (v[j] < 0.0) {
          v[j] = 0.0;
          ++sf.clamped;
        }
      }
      sf.at(k, j) = v[j];
    }
  }
  if (masked_total > 0 && static_cast<double>(sf.clamped) > 1e-3 * static_cast<double>(masked_total))
    sf.warnings.push_back("clamped " + std::to_string(sf.clamped) + " negative nodes of " +
                          std::to_string(masked_total));
  sf.residual_norm = residual_check(sf, model).max_abs;
  return sf;
}

double PriceSurface::value_at(double tq, double sq) const {
  const std::size_t k = bracket(t, tq);
  const std::size_t j = bracket(s, sq);
  const double wt = std::clamp((tq - t[k]) / (t[k + 1] - t[k]), 0.0, 1.0);
  const double ws = std::clamp((sq - s[j]) / (s[j + 1] - s[j]), 0.0, 1.0);
  auto layer = [&](std::size_t kk) {
    if (lower == BoundaryPolicy::dirichlet_zero && sq <= ghost[kk]) return 0.0;
    return (1.0 - ws) * at(kk, j) + ws * at(kk, j + 1);
  };
  return (1.0 - wt) * layer(k) + wt * layer(k + 1);
}

bool PriceSurface::covers(double tq, double sq) const {
  return tq >= t.front() && tq <= t.back() && sq >= s.front() && sq <= s.back();
}

DeltaEstimate extract_delta_flagged(const PriceSurface& sf, double tq, double sq) {
  const std::size_t k = bracket(sf.t, tq);
  const double wt = std::clamp((tq - sf.t[k]) / (sf.t[k + 1] - sf.t[k]), 0.0, 1.0);
  const std::size_t n = sf.n_s() - 1;
  DeltaEstimate out;
  auto layer = [&](std::size_t kk) {
    std::size_t j = bracket(sf.s, sq);
    if (j + 1 <= n && sq - sf.s[j] > sf.s[j + 1] - sq) ++j;  // nearest node
    const std::size_t lo = sf.first[kk];
    const std::size_t hi = sf.upper == BoundaryPolicy::neumann_flat ? n - 2 : n - 1;
    std::size_t c = j;
    if (c < lo) {
      c = lo;
      out.one_sided = true;
    }
    if (c > hi) {
      c = hi;
      out.one_sided = true;
    }
    return quad_derivative(sq, sf.s[c - 1], sf.at(kk, c - 1), sf.s[c], sf.at(kk, c), sf.s[c + 1], sf.at(kk, c + 1));
  };
  out.value = (1.0 - wt) * layer(k) + wt * layer(k + 1);
  return out;
}

double extract_delta(const PriceSurface& surface, double t, double s) {
  return extract_delta_flagged(surface, t, s).value;
}

ResidualReport residual_check(const PriceSurface& sf, const MarketModel& model, const ResidualWindow& w) {
  ResidualReport rep;
  const std::size_t n = sf.n_s() - 1;
  const std::size_t m = sf.n_t() - 1;
  double sum = 0.0;
  for (std::size_t k = 0; k + sf.startup_intervals < m; ++k) {
    const double t0 = sf.t[k], t1 = sf.t[k + 1];
    if (t0 < w.t_min || t1 > w.t_max) continue;
    const double dt = t1 - t0;
    const std::size_t lo = std::max(sf.first[k], sf.first[k + 1]);
    for (std::size_t j = lo; j + 2 <= n; ++j) {
      if (sf.s[j] < w.s_min || sf.s[j] > w.s_max) continue;
      if (!sf.masked(k, j) || !sf.masked(k + 1, j)) continue;
      const double dl = sf.s[j] - sf.s[j - 1];
      const double dr = sf.s[j + 1] - sf.s[j];
      const double wl = 1.0 / (dl * (dl + dr));
      const double wr = 1.0 / (dr * (dl + dr));
      auto op = [&](std::size_t kk, double tt) {
        return model.diffusion_1d(tt, sf.s[j]) *
               (wl * sf.at(kk, j - 1) - (wl + wr) * sf.at(kk, j) + wr * sf.at(kk, j + 1));
      };
      const double r = (sf.at(k + 1, j) - sf.at(k, j)) / dt + 0.5 * (op(k, t0) + op(k + 1, t1));
      rep.max_abs = std::max(rep.max_abs, std::abs(r));
      sum += std::abs(r);
      ++rep.nodes;
    }
  }
  rep.mean_abs = rep.nodes ? sum / static_cast<double>(rep.nodes) : 0.0;
  return rep;
}

PriceSurface sample_surface(const MarketModel& model, const PdeGrid& grid,
                            const std::function<double(double, double)>& f) {
  if (model.dim() != 1) throw ConfigError("sample_surface: d = 1 only");
  check_grid(grid);
  PriceSurface sf;
  sf.t = grid.t_nodes;
  sf.s = grid.s_nodes;
  sf.lower = grid.lower.value_or(default_lower_policy(model));
  sf.upper = grid.upper.value_or(BoundaryPolicy::dirichlet_payoff_extrapolation);
  const std::size_t ns = sf.s.size();
  sf.values.assign(sf.t.size() * ns, 0.0);
  sf.mask.assign(sf.t.size() * ns, 0);
  sf.ghost.assign(sf.t.size(), 0.0);
  sf.first.assign(sf.t.size(), 1);
  for (std::size_t k = 0; k < sf.t.size(); ++k) {
    const double b = std::max(model.lower_boundary(sf.t[k]), sf.s.front());
    sf.ghost[k] = b;
    std::size_t first = 1;
    while (first < ns && sf.s[first - 1] < b) ++first;
    sf.first[k] = first;
    for (std::size_t j = 0; j < ns; ++j) {
      sf.mask[k * ns + j] = model.in_support(sf.t[k], sf.s[j]) ? 1 : 0;
      if (sf.s[j] >= b && (sf.mask[k * ns + j] || sf.s[j] == b)) sf.values[k * ns + j] = f(sf.t[k], sf.s[j]);
    }
  }
  return sf;
}

void write_surface_csv(const PriceSurface& sf, std::ostream& out) {
  out << "t,s,value,delta\n";
  const std::size_t n = sf.n_s() - 1;
  for (std::size_t k = 0; k < sf.n_t(); ++k) {
    for (std::size_t j = 0; j <= n; ++j) {
      if (!sf.masked(k, j)) continue;
      const double d = extract_delta(sf, sf.t[k], sf.s[j]);
      out << format_double(sf.t[k]) << ',' << format_double(sf.s[j]) << ',' << format_double(sf.at(k, j)) << ','
          << format_double(d) << '\n';
    }
  }
}

namespace {

// Solve a tridiagonal system in place (a: sub, b: diag, c: super, d: rhs -> solution).
void thomas(std::vector<double>& a, std::vector<double>& b, std::vector<double>& c, std::vector<double>& d) {
  const std::size_t m = b.size();
  for (std::size_t r = 1; r < m; ++r) {
    const double w = a[r] / b[r - 1];
    b[r] -= w * c[r - 1];
    d[r] -= w * d[r - 1];
  }
  d[m - 1] /= b[m - 1];
  for (std::size_t r = m - 1; r-- > 0;) d[r] = (d[r] - c[r] * d[r + 1]) / b[r];
}

}  // namespace

PriceSurface2d solve_pde_2d_experimental(const MarketModel& model, const Payoff& payoff, const PdeGrid2d& grid) {
  if (model.dim() != 2) throw ConfigError("2d solver needs a d = 2 model");
  if (grid.t_nodes.size() < 2 || grid.s1_nodes.size() < 5 || grid.s2_nodes.size() < 5)
    throw ConfigError("2d pde grid too small");
  const auto& x = grid.s1_nodes;
  const auto& y = grid.s2_nodes;
  const std::size_t n1 = x.size(), n2 = y.size();
  const double h1 = x[1] - x[0], h2 = y[1] - y[0];
  for (std::size_t i = 1; i < n1; ++i)
    if (std::abs(x[i] - x[i - 1] - h1) > 1e-9 * h1) throw ConfigError("2d solver needs uniform s1 nodes");
  for (std::size_t j = 1; j < n2; ++j)
    if (std::abs(y[j] - y[j - 1] - h2) > 1e-9 * h2) throw ConfigError("2d solver needs uniform s2 nodes");

  auto idx = [n2](std::size_t i, std::size_t j) { return i * n2 + j; };
  auto p_at = [&](std::size_t i, std::size_t j) {
    const double pt[2] = {x[i], y[j]};
    return payoff(std::span<const double>(pt, 2));
  };

  std::vector<double> u(n1 * n2), a11(n1 * n2), a22(n1 * n2), a12(n1 * n2), pay(n1 * n2);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j) {
      pay[idx(i, j)] = p_at(i, j);
      u[idx(i, j)] = pay[idx(i, j)];
    }

  // Lower faces are unknowns when the normal diffusion vanishes there, Dirichlet otherwise.
  auto coeffs = [&](double tt) {
    Vector pt(2);
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t j = 0; j < n2; ++j) {
        pt << x[i], y[j];
        const Matrix dm = model.diffusion(tt, pt);
        a11[idx(i, j)] = 0.5 * dm(0, 0);
        a22[idx(i, j)] = 0.5 * dm(1, 1);
        a12[idx(i, j)] = dm(0, 1);
      }
  };
  auto l1 = [&](const std::vector<double>& v, std::size_t i, std::size_t j) {
    if (i == 0) return 0.0;
    return a11[idx(i, j)] * (v[idx(i - 1, j)] - 2.0 * v[idx(i, j)] + v[idx(i + 1, j)]) / (h1 * h1);
  };
  auto l2 = [&](const std::vector<double>& v, std::size_t i, std::size_t j) {
    if (j == 0) return 0.0;
    return a22[idx(i, j)] * (v[idx(i, j - 1)] - 2.0 * v[idx(i, j)] + v[idx(i, j + 1)]) / (h2 * h2);
  };
  auto l12 = [&](const std::vector<double>& v, std::size_t i, std::size_t j) {
    if (i == 0 || j == 0) return 0.0;
    return a12[idx(i, j)] *
           (v[idx(i + 1, j + 1)] - v[idx(i + 1, j - 1)] - v[idx(i - 1, j + 1)] + v[idx(i - 1, j - 1)]) /
           (4.0 * h1 * h2);
  };
  auto enforce_upper = [&](std::vector<double>& v) {
    for (std::size_t j = 0; j < n2; ++j)
      v[idx(n1 - 1, j)] = grid.upper == BoundaryPolicy::neumann_flat ? v[idx(n1 - 2, j)] : pay[idx(n1 - 1, j)];
    for (std::size_t i = 0; i < n1; ++i)
      v[idx(i, n2 - 1)] = grid.upper == BoundaryPolicy::neumann_flat ? v[idx(i, n2 - 2)] : pay[idx(i, n2 - 1)];
  };
  auto check_degenerate = [&]() {
    for (std::size_t j = 0; j < n2; ++j)
      if (a11[idx(0, j)] > 1e-14) throw ConfigError("2d solver needs vanishing diffusion on the s1 = 0 face");
    for (std::size_t i = 0; i < n1; ++i)
      if (a22[idx(i, 0)] > 1e-14) throw ConfigError("2d solver needs vanishing diffusion on the s2 = 0 face");
  };

  const double th = grid.theta;
  const auto& t = grid.t_nodes;
  for (std::size_t k = t.size() - 1; k-- > 0;) {
    const double dt = t[k + 1] - t[k];
    coeffs(t[k]);
    check_degenerate();
    std::vector<double> y0 = u;
    for (std::size_t i = 0; i + 1 < n1; ++i)
      for (std::size_t j = 0; j + 1 < n2; ++j) y0[idx(i, j)] = u[idx(i, j)] + dt * (l1(u, i, j) + l2(u, i, j) + l12(u, i, j));
    enforce_upper(y0);

    // s1 sweeps: (I - th dt L1) y1 = y0 - th dt L1 u.
    std::vector<double> y1 = y0;
    for (std::size_t j = 0; j + 1 < n2; ++j) {
      const std::size_t m = n1;
      std::vector<double> a(m, 0.0), b(m, 1.0), c(m, 0.0), d(m, 0.0);
      for (std::size_t i = 0; i + 1 < n1; ++i) {
        d[i] = y0[idx(i, j)] - th * dt * l1(u, i, j);
        if (i == 0) continue;
        const double w = th * dt * a11[idx(i, j)] / (h1 * h1);
        a[i] = -w;
        b[i] = 1.0 + 2.0 * w;
        c[i] = -w;
      }
      if (grid.upper == BoundaryPolicy::neumann_flat) {
        a[m - 1] = -1.0;
        d[m - 1] = 0.0;
      } else {
        d[m - 1] = pay[idx(n1 - 1, j)];
      }
      thomas(a, b, c, d);
      for (std::size_t i = 0; i < n1; ++i) y1[idx(i, j)] = d[i];
    }
    enforce_upper(y1);

    // s2 sweeps: (I - th dt L2) y2 = y1 - th dt L2 u.
    std::vector<double> y2 = y1;
    for (std::size_t i = 0; i + 1 < n1; ++i) {
      const std::size_t m = n2;
      std::vector<double> a(m, 0.0), b(m, 1.0), c(m, 0.0), d(m, 0.0);
      for (std::size_t j = 0; j + 1 < n2; ++j) {
        d[j] = y1[idx(i, j)] - th * dt * l2(u, i, j);
        if (j == 0) continue;
        const double w = th * dt * a22[idx(i, j)] / (h2 * h2);
        a[j] = -w;
        b[j] = 1.0 + 2.0 * w;
        c[j] = -w;
      }
      if (grid.upper == BoundaryPolicy::neumann_flat) {
        a[m - 1] = -1.0;
        d[m - 1] = 0.0;
      } else {
        d[m - 1] = pay[idx(i, n2 - 1)];
      }
      thomas(a, b, c, d);
      for (std::size_t j = 0; j < n2; ++j) y2[idx(i, j)] = d[j];
    }
    enforce_upper(y2);
    for (double& v : y2)
      if (!std::isfinite(v)) throw NumericalError("2d pde produced a non-finite value");
    u = std::move(y2);
  }

  PriceSurface2d out;
  out.s1 = x;
  out.s2 = y;
  out.values = std::move(u);
  return out;
}

double PriceSurface2d::value_at(double q1, double q2) const {
  const std::size_t i = bracket(s1, q1);
  const std::size_t j = bracket(s2, q2);
  const double w1 = std::clamp((q1 - s1[i]) / (s1[i + 1] - s1[i]), 0.0, 1.0);
  const double w2 = std::clamp((q2 - s2[j]) / (s2[j + 1] - s2[j]), 0.0, 1.0);
  return (1.0 - w1) * ((1.0 - w2) * at(i, j) + w2 * at(i, j + 1)) + w1 * ((1.0 - w2) * at(i + 1, j) + w2 * at(i + 1, j + 1));
}

}  // namespace arbhedge
