#include "arbhedge/simulation.hpp"

#include "arbhedge/errors.hpp"
#include "arbhedge/format.hpp"
#include "arbhedge/kernels.hpp"
#include "arbhedge/normal.hpp"
#include "arbhedge/parallel.hpp"
#include "arbhedge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace arbhedge {

std::string to_string(Measure m) { return m == Measure::P ? "P" : "Q"; }

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::automatic: return "auto";
    case Scheme::euler_log: return "euler_log";
    case Scheme::euler_direct: return "euler_direct";
    case Scheme::exact_bessel: return "exact_bessel";
    case Scheme::implicit_bessel: return "implicit_bessel";
  }
  return "unknown";
}

Scheme parse_scheme(const std::string& name) {
  if (name == "auto" || name == "automatic") return Scheme::automatic;
  if (name == "euler_log") return Scheme::euler_log;
  if (name == "euler_direct") return Scheme::euler_direct;
  if (name == "exact_bessel") return Scheme::exact_bessel;
  if (name == "implicit_bessel") return Scheme::implicit_bessel;
  throw ConfigError("unknown scheme '" + name + "'");
}

std::string to_string(McRoute r) { return r == McRoute::under_p ? "mc_p" : "mc_q"; }

void SimConfig::validate() const {
  if (n_paths == 0) throw ConfigError("sim: n_paths must be positive");
  if (n_steps == 0) throw ConfigError("sim: n_steps must be positive");
  if (record_stride == 0) throw ConfigError("sim: record_stride must be positive");
  if (antithetic && n_paths % 2 != 0) throw ConfigError("sim: antithetic sampling needs an even path count");
}

std::size_t PathEnsemble::absorbed_count() const {
  return static_cast<std::size_t>(std::count_if(absorbed_at.begin(), absorbed_at.end(),
                                                [](const std::optional<double>& a) { return a.has_value(); }));
}

PathEnsemble PathEnsemble::coarsen(std::size_t factor) const {
  if (factor == 0 || n_times() == 0 || (n_times() - 1) % factor != 0)
    throw ConfigError("coarsen: factor must divide the number of recorded intervals");
  PathEnsemble out;
  out.measure = measure;
  out.scheme = scheme;
  out.antithetic = antithetic;
  out.d = d;
  out.n_paths = n_paths;
  out.absorbed_at = absorbed_at;
  out.rejected_paths = rejected_paths;
  out.capped_paths = capped_paths;
  out.approximate_absorption = approximate_absorption;
  const std::size_t nt = (n_times() - 1) / factor + 1;
  for (std::size_t k = 0; k < nt; ++k) {
    out.times.push_back(times[k * factor]);
    out.steps.push_back(steps[k * factor]);
  }
  const std::size_t du = static_cast<std::size_t>(d);
  out.states.resize(n_paths * nt * du);
  out.deflator.resize(n_paths * nt);
  for (std::size_t p = 0; p < n_paths; ++p)
    for (std::size_t k = 0; k < nt; ++k) {
      for (std::size_t i = 0; i < du; ++i)
        out.states[(p * nt + k) * du + i] = states[(p * n_times() + k * factor) * du + i];
      out.deflator[p * nt + k] = deflator[p * n_times() + k * factor];
    }
  return out;
}

namespace {

constexpr std::size_t kBlock = 256;
constexpr double kInverseDeflatorFloor = 1e-12;
constexpr double kThetaStepCap = 10.0;
constexpr std::uint32_t kMaxAttempts = 1000;

struct Plan {
  const MarketModel* model = nullptr;
  const MprField* mpr = nullptr;
  SimConfig cfg;
  Measure measure = Measure::P;
  Scheme scheme = Scheme::automatic;
  std::size_t start_step = 0;
  Vector start;
  double dt = 0.0;
  double sqrt_dt = 0.0;
  std::vector<std::size_t> rec_steps;
  std::vector<int> rec_index;  // grid step -> recorded slot or -1
};

Scheme resolve_scheme(const MarketModel& model, Measure measure, Scheme requested) {
  const ModelKind kind = model.kind();
  const bool bessel = kind == ModelKind::bessel_drift;
  const bool reciprocal = kind == ModelKind::reciprocal_bessel;
  if (requested == Scheme::automatic) {
    if (bessel) return (measure == Measure::P && model.bessel_c() > 0.0) ? Scheme::implicit_bessel : Scheme::exact_bessel;
    if (reciprocal) return Scheme::exact_bessel;
    return Scheme::euler_log;
  }
  if (requested == Scheme::exact_bessel) {
    if (!(bessel || reciprocal)) throw ConfigError("exact_bessel scheme needs a Bessel-family model");
    if (bessel && measure == Measure::P && model.bessel_c() > 0.0)
      throw ConfigError("exact_bessel under P needs c = 0; use implicit_bessel");
  }
  if (requested == Scheme::implicit_bessel) {
    if (!bessel) throw ConfigError("implicit_bessel scheme needs the bessel_drift model");
    // Under Q the drifted Bessel stock is a Brownian motion: simulate it exactly.
    if (measure == Measure::Q) return Scheme::exact_bessel;
  }
  return requested;
}

Plan make_plan(const MarketModel& model, const MprField& mpr, const SimConfig& cfg, Measure measure,
               std::size_t start_step, const Vector& start) {
  cfg.validate();
  if (start.size() != model.dim()) throw ConfigError("simulate: start state dimension mismatch");
  if (start_step > cfg.n_steps) throw ConfigError("simulate: start step beyond horizon");
  Plan plan;
  plan.model = &model;
  plan.mpr = &mpr;
  plan.cfg = cfg;
  plan.measure = measure;
  plan.scheme = resolve_scheme(model, measure, cfg.scheme);
  plan.start_step = start_step;
  plan.start = start;
  plan.dt = cfg.dt(model.horizon());
  plan.sqrt_dt = std::sqrt(plan.dt);
  const double t0 = static_cast<double>(start_step) * plan.dt;
  if (!model.in_support(t0, start)) throw SupportError("simulate: start point outside the support region");
  plan.rec_index.assign(cfg.n_steps + 1, -1);
  for (std::size_t k = 0; k <= cfg.n_steps; k += cfg.record_stride) plan.rec_steps.push_back(k);
  if (plan.rec_steps.back() != cfg.n_steps) plan.rec_steps.push_back(cfg.n_steps);
  for (std::size_t i = 0; i < plan.rec_steps.size(); ++i) plan.rec_index[plan.rec_steps[i]] = static_cast<int>(i);
  return plan;
}

double grid_time(const Plan& plan, std::size_t k) {
  return k == plan.cfg.n_steps ? plan.model->horizon() : static_cast<double>(k) * plan.dt;
}

PathEnsemble allocate(const Plan& plan, std::size_t noise_dim) {
  PathEnsemble ens;
  ens.measure = plan.measure;
  ens.scheme = plan.scheme;
  ens.antithetic = plan.cfg.antithetic;
  ens.d = plan.model->dim();
  ens.n_paths = plan.cfg.n_paths;
  for (std::size_t k : plan.rec_steps) {
    ens.steps.push_back(k);
    ens.times.push_back(grid_time(plan, k));
  }
  ens.states.assign(ens.n_paths * ens.times.size() * static_cast<std::size_t>(ens.d), 0.0);
  ens.deflator.assign(ens.n_paths * ens.times.size(), 0.0);
  ens.absorbed_at.assign(ens.n_paths, std::nullopt);
  ens.noise_dim = noise_dim;
  if (plan.cfg.keep_increments) ens.increments.assign(ens.n_paths * plan.cfg.n_steps * noise_dim, 0.0);
  return ens;
}

struct StreamId {
  std::uint64_t stream;
  double sign;
};

StreamId stream_of(const Plan& plan, std::size_t path) {
  if (plan.cfg.antithetic) return {path / 2, (path % 2) ? -1.0 : 1.0};
  return {path, 1.0};
}

void write_state(PathEnsemble& ens, std::size_t path, std::size_t slot, double s, double defl) {
  const std::size_t nt = ens.n_times();
  ens.states[(path * nt + slot) * static_cast<std::size_t>(ens.d)] = s;
  ens.deflator[path * nt + slot] = defl;
}

// Bessel-family block simulation with the vector kernels. Covers the exact
// 3d Bessel (and its reciprocal) under P and Q, the drift-implicit Bessel with
// drift under P, and the absorbed Brownian motion of the Bessel model under Q.
void run_bessel_block(const Plan& plan, PathEnsemble& ens, std::size_t p0, std::size_t p1) {
  const kernels::KernelTable& kt = kernels::active_kernels();
  const MarketModel& model = *plan.model;
  const std::size_t n = p1 - p0;
  const bool reciprocal = model.kind() == ModelKind::reciprocal_bessel;
  const bool q_bm = !reciprocal && plan.measure == Measure::Q;
  const bool implicit = plan.scheme == Scheme::implicit_bessel;
  const bool three_d = !q_bm && !implicit;
  const std::size_t noise = three_d ? 3 : 1;
  const double c = model.bessel_c();
  const double t_start = static_cast<double>(plan.start_step) * plan.dt;
  const double s_start = plan.start(0);

  std::vector<PathRng> rng;
  std::vector<double> sign(n);
  rng.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const StreamId id = stream_of(plan, p0 + j);
    rng.emplace_back(plan.cfg.seed, id.stream);
    sign[j] = id.sign;
  }

  std::vector<double> z1(n), z2(n), z3(n), d1(n), d2(n), d3(n), b1(n), b2(n), b3(n), radius(n), aux(n);
  std::vector<double> y_old(n), expo(n), integral(n, 0.0);
  std::vector<char> dead(n, 0);
  std::vector<double> tau(n, 0.0);

  // Exact 3d: b = (s, 0, 0) with S = |b| (Bessel) or 1/|b| (reciprocal).
  // Implicit and Q: b1 carries X = S - ct.
  const double x_start = reciprocal ? 1.0 / s_start : s_start - c * t_start;
  std::fill(b1.begin(), b1.end(), x_start);

  auto record = [&](std::size_t step) {
    const int slot = plan.rec_index[step];
    if (slot < 0) return;
    const double t = grid_time(plan, step);
    const auto us = static_cast<std::size_t>(slot);
    if (step <= plan.start_step) {
      for (std::size_t j = 0; j < n; ++j) write_state(ens, p0 + j, us, s_start, 1.0);
      return;
    }
    if (three_d) {
      if (reciprocal) {
        kt.scaled_reciprocal(n, radius.data(), 1.0, aux.data());
        for (std::size_t j = 0; j < n; ++j) write_state(ens, p0 + j, us, aux[j], 1.0);
      } else {
        kt.scaled_reciprocal(n, radius.data(), s_start, aux.data());
        for (std::size_t j = 0; j < n; ++j) write_state(ens, p0 + j, us, radius[j], aux[j]);
      }
    } else if (implicit) {
      for (std::size_t j = 0; j < n; ++j) {
        const double x = b1[j];
        const double z = (x_start / x) * std::exp(-c * integral[j]);
        write_state(ens, p0 + j, us, x + c * t, z);
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        if (dead[j]) {
          write_state(ens, p0 + j, us, c * tau[j], 0.0);
        } else {
          const double y = b1[j];
          write_state(ens, p0 + j, us, y + c * t, (y / x_start) * std::exp(c * integral[j]));
        }
      }
    }
  };

  record(0);
  for (std::size_t k = 0; k < plan.cfg.n_steps; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      z1[j] = sign[j] * rng[j].normal();
      if (three_d) {
        z2[j] = sign[j] * rng[j].normal();
        z3[j] = sign[j] * rng[j].normal();
      }
    }
    kt.scale(n, z1.data(), plan.sqrt_dt, d1.data());
    if (three_d) {
      kt.scale(n, z2.data(), plan.sqrt_dt, d2.data());
      kt.scale(n, z3.data(), plan.sqrt_dt, d3.data());
    }
    if (plan.cfg.keep_increments) {
      for (std::size_t j = 0; j < n; ++j) {
        double* dst = ens.increments.data() + ((p0 + j) * plan.cfg.n_steps + k) * noise;
        dst[0] = d1[j];
        if (three_d) {
          dst[1] = d2[j];
          dst[2] = d3[j];
        }
      }
    }
    if (k < plan.start_step) {
      record(k + 1);
      continue;
    }
    const double t_next = grid_time(plan, k + 1);
    if (three_d) {
      kt.bessel3_step(n, b1.data(), b2.data(), b3.data(), d1.data(), d2.data(), d3.data(), radius.data());
    } else if (implicit) {
      std::copy(b1.begin(), b1.end(), y_old.begin());
      kt.implicit_bessel_step(n, b1.data(), d1.data(), c * plan.dt, plan.dt);
      if (c > 0.0)
        for (std::size_t j = 0; j < n; ++j) integral[j] += 0.5 * plan.dt * (1.0 / y_old[j] + 1.0 / b1[j]);
    } else {
      std::copy(b1.begin(), b1.end(), y_old.begin());
      kt.shifted_add(n, b1.data(), d1.data(), c * plan.dt);
      if (plan.cfg.bridge_correction) kt.bridge_exponent(n, y_old.data(), b1.data(), 1.0 / plan.dt, expo.data());
      const double t_prev = grid_time(plan, k);
      for (std::size_t j = 0; j < n; ++j) {
        if (dead[j]) continue;
        const double y = b1[j];
        bool hit = false;
        double when = t_prev + 0.5 * plan.dt;
        if (y <= 0.0) {
          hit = true;
          when = t_prev + plan.dt * (y_old[j] / (y_old[j] - y));
        } else if (plan.cfg.bridge_correction) {
          const double u = rng[j].uniform();
          hit = std::log(u) < expo[j];
        }
        if (hit) {
          dead[j] = 1;
          tau[j] = std::min(when, t_next);
          ens.absorbed_at[p0 + j] = tau[j];
          b1[j] = 0.0;
        } else if (c > 0.0) {
          integral[j] += 0.5 * plan.dt * (1.0 / y_old[j] + 1.0 / y);
        }
      }
    }
    record(k + 1);
  }
}

struct GenericResult {
  bool rejected = false;
  bool capped = false;
  bool approximate = false;
};

// One path of the generic Euler schemes. Returns rejected when the path leaves
// the support region (a discretisation artefact).
GenericResult run_generic_path(const Plan& plan, PathEnsemble& ens, std::size_t path, PathRng& rng, double sign) {
  const MarketModel& model = *plan.model;
  const MprField& mpr = *plan.mpr;
  const int d = model.dim();
  const int kd = model.drivers();
  const bool log_scheme = plan.scheme != Scheme::euler_direct;
  const bool under_q = plan.measure == Measure::Q;
  const bool first_passage = model.absorption_is_first_passage() && d == 1;
  const std::size_t nt = ens.n_times();
  GenericResult res;

  Vector s = plan.start;
  double log_defl = 0.0;  // log Z under P, log 1/Z under Q
  double defl = 1.0;      // direct scheme value
  bool dead = false;
  Vector dw(kd), mu(d), sdw(d);
  Matrix sig(d, kd);
  Vector theta(kd);
  const bool constant = model.constant_coefficients();
  if (constant) {
    mu = model.mu(0.0, s);
    sig = model.sigma(0.0, s);
    theta = mpr.theta(0.0, s);
  }

  auto emit = [&](std::size_t step) {
    const int slot = plan.rec_index[step];
    if (slot < 0) return;
    const std::size_t base = (path * nt + static_cast<std::size_t>(slot)) * static_cast<std::size_t>(d);
    for (int i = 0; i < d; ++i) ens.states[base + static_cast<std::size_t>(i)] = s(i);
    double v = log_scheme ? std::exp(log_defl) : defl;
    if (dead) v = 0.0;
    ens.deflator[path * nt + static_cast<std::size_t>(slot)] = v;
  };

  emit(0);
  for (std::size_t k = 0; k < plan.cfg.n_steps; ++k) {
    for (int j = 0; j < kd; ++j) dw(j) = sign * rng.normal() * plan.sqrt_dt;
    if (plan.cfg.keep_increments) {
      double* dst = ens.increments.data() + (path * plan.cfg.n_steps + k) * static_cast<std::size_t>(kd);
      for (int j = 0; j < kd; ++j) dst[j] = dw(j);
    }
    if (k < plan.start_step || dead) {
      emit(k + 1);
      continue;
    }
    const double t = grid_time(plan, k);
    const double t_next = grid_time(plan, k + 1);
    if (!constant) {
      mu = model.mu(t, s);
      sig = model.sigma(t, s);
      theta = mpr.theta(t, s);
    }
    if (!under_q) {
      const double tn = theta.norm();
      if (tn * plan.dt > kThetaStepCap) {
        theta *= kThetaStepCap / (tn * plan.dt);
        res.capped = true;
      }
    }
    sdw = sig * dw;
    const double s_prev = s(0);
    const double var_prev = first_passage ? model.diffusion_1d(t, s_prev) : 0.0;
    for (int i = 0; i < d; ++i) {
      const double drift = under_q ? 0.0 : mu(i);
      if (log_scheme)
        s(i) *= std::exp((drift - 0.5 * sig.row(i).squaredNorm()) * plan.dt + sdw(i));
      else
        s(i) += s(i) * (drift * plan.dt + sdw(i));
    }
    if (!under_q) {
      if (log_scheme)
        log_defl -= theta.dot(dw) + 0.5 * theta.squaredNorm() * plan.dt;
      else
        defl -= defl * theta.dot(dw);
      if (!(defl > 0.0) || !model.in_support(t_next, s) || !std::isfinite(log_defl)) {
        res.rejected = true;
        return res;
      }
    } else {
      if (log_scheme)
        log_defl += theta.dot(dw) - 0.5 * theta.squaredNorm() * plan.dt;
      else
        defl += defl * theta.dot(dw);
      bool hit = false;
      double when = t + 0.5 * plan.dt;
      if (first_passage) {
        const double y0 = s_prev - model.lower_boundary(t);
        const double y1 = s(0) - model.lower_boundary(t_next);
        if (y1 <= 0.0) {
          hit = true;
          when = t + plan.dt * (y0 / (y0 - y1));
        } else if (plan.cfg.bridge_correction && var_prev > 0.0) {
          hit = rng.uniform() < std::exp(-2.0 * y0 * y1 / (var_prev * plan.dt));
        }
        if (hit) s(0) = model.lower_boundary(std::min(when, t_next));
      } else {
        const double inv = log_scheme ? std::exp(log_defl) : defl;
        if (!(inv > kInverseDeflatorFloor)) {
          hit = true;
          res.approximate = true;
          when = t_next;
        } else if (!model.in_support(t_next, s)) {
          res.rejected = true;
          return res;
        }
      }
      if (hit) {
        dead = true;
        ens.absorbed_at[path] = std::min(when, t_next);
      }
    }
    emit(k + 1);
  }
  return res;
}

PathEnsemble run(const Plan& plan) {
  const bool bessel_block = plan.scheme == Scheme::exact_bessel || plan.scheme == Scheme::implicit_bessel;
  std::size_t noise = static_cast<std::size_t>(plan.model->drivers());
  if (bessel_block) {
    const bool q_bm = plan.model->kind() == ModelKind::bessel_drift && plan.measure == Measure::Q;
    noise = (q_bm || plan.scheme == Scheme::implicit_bessel) ? 1 : 3;
  }
  PathEnsemble ens = allocate(plan, noise);
  const std::size_t n_blocks = (plan.cfg.n_paths + kBlock - 1) / kBlock;
  std::vector<std::size_t> rejected(n_blocks, 0), capped(n_blocks, 0);
  std::vector<char> approx(n_blocks, 0);

  for_each_block(n_blocks, plan.cfg.threads, [&](std::size_t b) {
    const std::size_t p0 = b * kBlock;
    const std::size_t p1 = std::min(plan.cfg.n_paths, p0 + kBlock);
    if (bessel_block) {
      run_bessel_block(plan, ens, p0, p1);
      return;
    }
    for (std::size_t p = p0; p < p1; ++p) {
      const StreamId id = stream_of(plan, p);
      for (std::uint32_t attempt = 0;; ++attempt) {
        if (attempt >= kMaxAttempts) throw NumericalError("simulate: path keeps leaving the support region");
        PathRng rng(plan.cfg.seed, id.stream, attempt);
        ens.absorbed_at[p].reset();
        const GenericResult r = run_generic_path(plan, ens, p, rng, id.sign);
        if (r.rejected) {
          ++rejected[b];
          continue;
        }
        capped[b] += r.capped ? 1 : 0;
        approx[b] = approx[b] || r.approximate;
        break;
      }
    }
  });

  for (std::size_t b = 0; b < n_blocks; ++b) {
    ens.rejected_paths += rejected[b];
    ens.capped_paths += capped[b];
    ens.approximate_absorption = ens.approximate_absorption || approx[b];
  }
  const double rate = static_cast<double>(ens.rejected_paths) / static_cast<double>(plan.cfg.n_paths);
  if (rate > plan.cfg.max_rejection_rate) {
    std::ostringstream os;
    os << "simulate: rejection rate " << rate << " exceeds " << plan.cfg.max_rejection_rate
       << " (paths leaving the support region; refine the time grid)";
    throw NumericalError(os.str());
  }
  return ens;
}

}  // namespace

PathEnsemble simulate_p(const MarketModel& model, const MprField& mpr, const SimConfig& cfg) {
  return run(make_plan(model, mpr, cfg, Measure::P, 0, model.initial_state()));
}

PathEnsemble simulate_q(const MarketModel& model, const MprField& mpr, const SimConfig& cfg) {
  return run(make_plan(model, mpr, cfg, Measure::Q, 0, model.initial_state()));
}

PathEnsemble simulate_from(const MarketModel& model, const MprField& mpr, const SimConfig& cfg, Measure measure,
                           std::size_t start_step, const Vector& start_state) {
  return run(make_plan(model, mpr, cfg, measure, start_step, start_state));
}

McPrice price_from_ensemble(const PathEnsemble& ens, const Payoff& payoff) {
  McPrice out;
  out.n_paths = ens.n_paths;
  const std::size_t last = ens.n_times() - 1;
  std::vector<double> samples(ens.n_paths, 0.0);
  std::size_t effective = 0;
  for (std::size_t p = 0; p < ens.n_paths; ++p) {
    if (ens.measure == Measure::P) {
      samples[p] = ens.deflator_at(p, last) * payoff(ens.state_vector(p, last));
      ++effective;
    } else if (ens.alive(p, last)) {
      samples[p] = payoff(ens.state_vector(p, last));
      ++effective;
    }
  }
  if (ens.antithetic) {
    // Pairs are dependent; the pair averages are the independent samples.
    std::vector<double> pairs(ens.n_paths / 2);
    for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i] = 0.5 * (samples[2 * i] + samples[2 * i + 1]);
    samples.swap(pairs);
  }
  const MeanSe m = mean_se(samples);
  out.estimate = m.mean;
  out.std_error = m.se;
  out.n_effective = effective;
  return out;
}

McPrice price_mc(const MarketModel& model, const MprField& mpr, const Payoff& payoff, const SimConfig& cfg,
                 McRoute route) {
  SimConfig c = cfg;
  c.record_stride = cfg.n_steps;
  c.keep_increments = false;
  const PathEnsemble ens = route == McRoute::under_p ? simulate_p(model, mpr, c) : simulate_q(model, mpr, c);
  return price_from_ensemble(ens, payoff);
}

ComparisonReport compare_mprs(const SimConfig& cfg, double horizon) {
  cfg.validate();
  if (!(horizon > 0.0)) throw ConfigError("compare_mprs: horizon must be positive");
  const MarketModel market = MarketModel::two_driver(1.0, horizon);
  const MprField theta_field(market);
  const std::size_t n = cfg.n_paths;
  const double dt = cfg.dt(horizon);
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> z_theta(n), z_nu(n), z_step(n);
  const std::size_t n_blocks = (n + kBlock - 1) / kBlock;

  for_each_block(n_blocks, cfg.threads, [&](std::size_t b) {
    const std::size_t p1 = std::min(n, (b + 1) * kBlock);
    for (std::size_t p = b * kBlock; p < p1; ++p) {
      PathRng rng(cfg.seed, p);
      double b1 = 1.0, b2 = 0.0, b3 = 0.0;
      DeflatorState zt, zn;
      Vector dw(2), nu(2);
      const Vector s0 = market.initial_state();
      for (std::size_t k = 0; k < cfg.n_steps; ++k) {
        const double w1 = rng.normal() * sqrt_dt;
        const double e1 = rng.normal() * sqrt_dt;
        const double e2 = rng.normal() * sqrt_dt;
        const double e3 = rng.normal() * sqrt_dt;
        const double r = std::sqrt(b1 * b1 + b2 * b2 + b3 * b3);
        // W_2 is the radial driver of the 3d Brownian motion.
        dw << w1, (b1 * e1 + b2 * e2 + b3 * e3) / r;
        nu << 0.0, 1.0 / r;
        zt = sdf_increment(zt, theta_field.theta(0.0, s0), dw, dt);
        zn = sdf_increment(zn, nu, dw, dt);
        b1 += e1;
        b2 += e2;
        b3 += e3;
      }
      z_theta[p] = zt.z();
      z_nu[p] = 1.0 / std::sqrt(b1 * b1 + b2 * b2 + b3 * b3);
      z_step[p] = zn.z();
    }
  });

  ComparisonReport rep;
  rep.z_theta = mean_se(z_theta);
  rep.z_nu = mean_se(z_nu);
  rep.z_nu_stepped = mean_se(z_step);
  rep.expected_nu = 2.0 * norm_cdf(1.0 / std::sqrt(horizon)) - 1.0;
  rep.ordering_holds = rep.z_nu.mean + 3.0 * rep.z_nu.se < rep.z_theta.mean - 3.0 * rep.z_theta.se;
  return rep;
}

FlowProbeReport flow_continuity_probe(const MarketModel& model, const MprField& mpr, const SimConfig& cfg,
                                      const StartPoint& base, const std::vector<StartPoint>& perturbations) {
  SimConfig c = cfg;
  c.record_stride = 1;
  c.keep_increments = false;
  const double dt = c.dt(model.horizon());
  auto snap = [&](double t) {
    const double k = std::round(t / dt);
    if (k < 0.0 || k > static_cast<double>(c.n_steps)) throw ConfigError("flow probe: start time outside [0, T]");
    return static_cast<std::size_t>(k);
  };
  const std::size_t base_step = snap(base.t);
  const PathEnsemble ref = simulate_from(model, mpr, c, Measure::P, base_step, base.s);
  const std::size_t d = static_cast<std::size_t>(model.dim());

  FlowProbeReport rep;
  std::vector<std::vector<double>> per_path;
  for (const StartPoint& sp : perturbations) {
    const std::size_t step = snap(sp.t);
    const PathEnsemble ens = simulate_from(model, mpr, c, Measure::P, step, sp.s);
    FlowProbeEntry e;
    e.t = static_cast<double>(step) * dt;
    e.s = sp.s;
    e.start_distance = std::sqrt((e.t - base.t) * (e.t - base.t) + (sp.s - base.s).squaredNorm());
    std::vector<double> sup(ens.n_paths, 0.0);
    for (std::size_t p = 0; p < ens.n_paths; ++p) {
      double m = 0.0;
      for (std::size_t k = base_step; k < ens.n_times(); ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double diff = ens.state(p, k, static_cast<int>(i)) - ref.state(p, k, static_cast<int>(i));
          acc += diff * diff;
        }
        const double dz = ens.deflator_at(p, k) - ref.deflator_at(p, k);
        m = std::max(m, std::sqrt(acc + dz * dz));
      }
      sup[p] = m;
    }
    e.sup_distance = mean_se(sup);
    rep.entries.push_back(std::move(e));
    per_path.push_back(std::move(sup));
  }
  std::vector<std::size_t> order(rep.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rep.entries[a].start_distance > rep.entries[b].start_distance;
  });
  std::vector<FlowProbeEntry> sorted;
  for (std::size_t i : order) sorted.push_back(rep.entries[i]);
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto& prev = per_path[order[i - 1]];
    const auto& cur = per_path[order[i]];
    std::vector<double> diff(cur.size());
    for (std::size_t p = 0; p < cur.size(); ++p) diff[p] = cur[p] - prev[p];
    const MeanSe md = mean_se(diff);
    if (md.mean > 3.0 * md.se) rep.monotone = false;
  }
  rep.entries = std::move(sorted);
  return rep;
}

std::vector<MeanSe> ensemble_time_means(const PathEnsemble& ens,
                                        const std::function<double(std::size_t, std::size_t)>& f) {
  std::vector<MeanSe> out;
  out.reserve(ens.n_times());
  std::vector<double> xs(ens.n_paths);
  for (std::size_t k = 0; k < ens.n_times(); ++k) {
    for (std::size_t p = 0; p < ens.n_paths; ++p) xs[p] = f(p, k);
    out.push_back(mean_se(xs));
  }
  return out;
}

void write_ensemble_csv(const PathEnsemble& ens, std::ostream& out) {
  out << "path_id,time";
  for (int i = 0; i < ens.d; ++i) out << ",S_" << (i + 1);
  out << ",deflator,absorbed\n";
  for (std::size_t p = 0; p < ens.n_paths; ++p)
    for (std::size_t k = 0; k < ens.n_times(); ++k) {
      out << p << ',' << format_double(ens.times[k]);
      for (int i = 0; i < ens.d; ++i) out << ',' << format_double(ens.state(p, k, i));
      out << ',' << format_double(ens.deflator_at(p, k)) << ',' << (ens.alive(p, k) ? 0 : 1) << '\n';
    }
}

}  // namespace arbhedge
