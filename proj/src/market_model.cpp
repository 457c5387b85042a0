#include "arbhedge/market_model.hpp"

#include "arbhedge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace arbhedge {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::bessel_drift: return "bessel_drift";
    case ModelKind::reciprocal_bessel: return "reciprocal_bessel";
    case ModelKind::gbm: return "gbm";
    case ModelKind::coefficient_table: return "coefficient_table";
    case ModelKind::two_driver: return "two_driver";
    case ModelKind::custom: return "custom";
  }
  return "unknown";
}

struct MarketModel::Impl {
  std::string name;
  ModelKind kind = ModelKind::custom;
  int d = 1;
  int k = 1;
  double horizon = 1.0;
  Vector s0;
  ModelCoefficients coeff;
  bool constant = false;
  double c = 0.0;
  std::map<std::string, double> params;
};

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw ConfigError(what);
}

Vector scalar_vector(double v) { return Vector::Constant(1, v); }
Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

bool all_positive(const Vector& s) {
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(s(i) > 0.0)) return false;
  return true;
}

double interp(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t j = static_cast<std::size_t>(it - xs.begin());
  const double w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
  return ys[j - 1] + w * (ys[j] - ys[j - 1]);
}

}  // namespace

MarketModel MarketModel::bessel_drift(double c, double s0, double horizon) {
  require(c >= 0.0 && std::isfinite(c), "bessel_drift: c must be a nonnegative real");
  require(s0 > 0.0 && std::isfinite(s0), "bessel_drift: S0 must be positive");
  require(horizon > 0.0 && std::isfinite(horizon), "bessel_drift: T must be positive");
  auto impl = std::make_shared<Impl>();
  impl->name = "bessel_drift";
  impl->kind = ModelKind::bessel_drift;
  impl->horizon = horizon;
  impl->s0 = scalar_vector(s0);
  impl->c = c;
  impl->params = {{"c", c}, {"S0", s0}, {"T", horizon}};
  impl->coeff.mu = [c](double t, const Vector& s) {
    return scalar_vector(1.0 / (s(0) * (s(0) - c * t)));
  };
  impl->coeff.sigma = [](double, const Vector& s) { return scalar_matrix(1.0 / s(0)); };
  impl->coeff.support = [c](double t, const Vector& s) { return s(0) > c * t; };
  return MarketModel(std::move(impl));
}

MarketModel MarketModel::reciprocal_bessel(double s0, double horizon) {
  require(s0 > 0.0 && std::isfinite(s0), "reciprocal_bessel: S0 must be positive");
  require(horizon > 0.0 && std::isfinite(horizon), "reciprocal_bessel: T must be positive");
  auto impl = std::make_shared<Impl>();
  impl->name = "reciprocal_bessel";
  impl->kind = ModelKind::reciprocal_bessel;
  impl->horizon = horizon;
  impl->s0 = scalar_vector(s0);
  impl->params = {{"S0", s0}, {"T", horizon}};
  impl->coeff.mu = [](double, const Vector&) { return scalar_vector(0.0); };
  impl->coeff.sigma = [](double, const Vector& s) { return scalar_matrix(-s(0)); };
  impl->coeff.support = [](double, const Vector& s) { return s(0) > 0.0; };
  return MarketModel(std::move(impl));
}

MarketModel MarketModel::gbm(Vector mu, Matrix sigma, Vector s0, double horizon) {
  require(mu.size() >= 1, "gbm: mu must be nonempty");
  require(sigma.rows() == mu.size() && sigma.cols() >= 1, "gbm: sigma must be d x K with d = len(mu)");
  require(s0.size() == mu.size() && all_positive(s0), "gbm: S0 must be positive with length d");
  require(horizon > 0.0 && std::isfinite(horizon), "gbm: T must be positive");
  auto impl = std::make_shared<Impl>();
  impl->name = "gbm";
  impl->kind = ModelKind::gbm;
  impl->d = static_cast<int>(mu.size());
  impl->k = static_cast<int>(sigma.cols());
  impl->horizon = horizon;
  impl->s0 = s0;
  impl->constant = true;
  impl->params = {{"T", horizon}};
  if (impl->d == 1) {
    impl->params["S0"] = s0(0);
    impl->params["mu"] = mu(0);
    if (impl->k == 1) impl->params["sigma"] = sigma(0, 0);
  }
  impl->coeff.mu = [mu](double, const Vector&) { return mu; };
  impl->coeff.sigma = [sigma](double, const Vector&) { return sigma; };
  impl->coeff.support = [](double, const Vector& s) { return all_positive(s); };
  return MarketModel(std::move(impl));
}

MarketModel MarketModel::coefficient_table(std::vector<double> s_grid, std::vector<double> mu,
                                           std::vector<double> sigma, double s0, double horizon) {
  require(s_grid.size() >= 2, "coefficient_table: need at least two grid points");
  require(mu.size() == s_grid.size() && sigma.size() == s_grid.size(),
          "coefficient_table: mu and sigma must match the s grid");
  for (std::size_t i = 1; i < s_grid.size(); ++i)
    require(s_grid[i] > s_grid[i - 1], "coefficient_table: s grid must be increasing");
  require(s0 > 0.0, "coefficient_table: S0 must be positive");
  require(horizon > 0.0, "coefficient_table: T must be positive");
  auto impl = std::make_shared<Impl>();
  impl->name = "coefficient_table";
  impl->kind = ModelKind::coefficient_table;
  impl->horizon = horizon;
  impl->s0 = scalar_vector(s0);
  impl->params = {{"S0", s0}, {"T", horizon}};
  auto grid = std::make_shared<const std::vector<double>>(std::move(s_grid));
  auto mus = std::make_shared<const std::vector<double>>(std::move(mu));
  auto sigmas = std::make_shared<const std::vector<double>>(std::move(sigma));
  impl->coeff.mu = [grid, mus](double, const Vector& s) { return scalar_vector(interp(*grid, *mus, s(0))); };
  impl->coeff.sigma = [grid, sigmas](double, const Vector& s) {
    return scalar_matrix(interp(*grid, *sigmas, s(0)));
  };
  impl->coeff.support = [](double, const Vector& s) { return s(0) > 0.0; };
  return MarketModel(std::move(impl));
}

MarketModel MarketModel::two_driver(double s0, double horizon) {
  Matrix sigma(1, 2);
  sigma << 1.0, 0.0;
  MarketModel base = gbm(Vector::Zero(1), sigma, scalar_vector(s0), horizon);
  auto impl = std::make_shared<Impl>(*base.impl_);
  impl->name = "two_driver";
  impl->kind = ModelKind::two_driver;
  return MarketModel(std::move(impl));
}

MarketModel MarketModel::custom(std::string name, int d, int k, ModelCoefficients coefficients, Vector s0,
                                double horizon) {
  require(d >= 1 && k >= 1, "custom: d and K must be positive");
  require(coefficients.mu && coefficients.sigma, "custom: mu and sigma are required");
  require(s0.size() == d && all_positive(s0), "custom: S0 must be positive with length d");
  require(horizon > 0.0, "custom: T must be positive");
  auto impl = std::make_shared<Impl>();
  impl->name = std::move(name);
  impl->kind = ModelKind::custom;
  impl->d = d;
  impl->k = k;
  impl->horizon = horizon;
  impl->s0 = std::move(s0);
  impl->coeff = std::move(coefficients);
  if (!impl->coeff.support) impl->coeff.support = [](double, const Vector& s) { return all_positive(s); };
  impl->params = {{"T", horizon}};
  return MarketModel(std::move(impl));
}

const std::string& MarketModel::name() const { return impl_->name; }
ModelKind MarketModel::kind() const { return impl_->kind; }
int MarketModel::dim() const { return impl_->d; }
int MarketModel::drivers() const { return impl_->k; }
double MarketModel::horizon() const { return impl_->horizon; }
const Vector& MarketModel::initial_state() const { return impl_->s0; }
bool MarketModel::constant_coefficients() const { return impl_->constant; }
const std::map<std::string, double>& MarketModel::params() const { return impl_->params; }

Vector MarketModel::mu(double t, const Vector& s) const { return impl_->coeff.mu(t, s); }
Matrix MarketModel::sigma(double t, const Vector& s) const { return impl_->coeff.sigma(t, s); }

bool MarketModel::in_support(double t, const Vector& s) const {
  return t >= 0.0 && t <= impl_->horizon && impl_->coeff.support(t, s);
}

bool MarketModel::in_support(double t, double s) const { return in_support(t, scalar_vector(s)); }

Matrix MarketModel::covariance(double t, const Vector& s) const {
  const Matrix sig = sigma(t, s);
  return sig * sig.transpose();
}

Matrix MarketModel::diffusion(double t, const Vector& s) const {
  return s.asDiagonal() * covariance(t, s) * s.asDiagonal();
}

double MarketModel::diffusion_1d(double t, double s) const {
  switch (impl_->kind) {
    case ModelKind::bessel_drift: return 1.0;
    case ModelKind::reciprocal_bessel: return s * s * s * s;
    default: break;
  }
  const Matrix sig = sigma(t, scalar_vector(s));
  return s * s * sig.row(0).squaredNorm();
}

double MarketModel::lower_boundary(double t) const {
  return impl_->kind == ModelKind::bessel_drift ? impl_->c * t : 0.0;
}

bool MarketModel::absorption_is_first_passage() const { return impl_->kind == ModelKind::bessel_drift; }

double MarketModel::bessel_c() const { return impl_->c; }

namespace {

double get(const std::map<std::string, double>& params, const std::string& key, std::optional<double> fallback) {
  auto it = params.find(key);
  if (it != params.end()) return it->second;
  if (fallback) return *fallback;
  throw ConfigError("missing model parameter '" + key + "'");
}

std::vector<double> get_array(const std::map<std::string, std::vector<double>>& arrays, const std::string& key) {
  auto it = arrays.find(key);
  if (it == arrays.end()) throw ConfigError("missing model array '" + key + "'");
  return it->second;
}

}  // namespace

MarketModel make_model(const std::string& name, const std::map<std::string, double>& params,
                       const std::map<std::string, std::vector<double>>& arrays) {
  if (name == "bessel_drift" || name == "bessel")
    return MarketModel::bessel_drift(get(params, "c", 0.0), get(params, "S0", 1.0), get(params, "T", 1.0));
  if (name == "reciprocal_bessel")
    return MarketModel::reciprocal_bessel(get(params, "S0", 1.0), get(params, "T", 1.0));
  if (name == "two_driver") return MarketModel::two_driver(get(params, "S0", 1.0), get(params, "T", 1.0));
  if (name == "coefficient_table")
    return MarketModel::coefficient_table(get_array(arrays, "s"), get_array(arrays, "mu"), get_array(arrays, "sigma"),
                                          get(params, "S0", 1.0), get(params, "T", 1.0));
  if (name == "gbm") {
    // Scalar parameters describe d = K = 1; arrays give the multi-asset form
    // with sigma stored row-major as d x K.
    if (arrays.count("mu")) {
      const auto mu = get_array(arrays, "mu");
      const auto sig = get_array(arrays, "sigma");
      const auto s0 = get_array(arrays, "S0");
      const std::size_t d = mu.size();
      if (d == 0 || sig.size() % d != 0) throw ConfigError("gbm: sigma must have d*K entries");
      const std::size_t k = sig.size() / d;
      Matrix sigma(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < k; ++j) sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sig[i * k + j];
      return MarketModel::gbm(Eigen::Map<const Vector>(mu.data(), static_cast<Eigen::Index>(d)), sigma,
                              Eigen::Map<const Vector>(s0.data(), static_cast<Eigen::Index>(s0.size())),
                              get(params, "T", 1.0));
    }
    return MarketModel::gbm(scalar_vector(get(params, "mu", 0.0)), scalar_matrix(get(params, "sigma", 0.2)),
                            scalar_vector(get(params, "S0", 1.0)), get(params, "T", 1.0));
  }
  throw ConfigError("unknown model '" + name + "'");
}

MprSolution min_norm_solve(const Matrix& sigma, const Vector& rhs, const MprOptions& opts) {
  MprSolution out;
  if (sigma.rows() == 1 && sigma.cols() == 1) {
    const double v = sigma(0, 0);
    const double x = (std::abs(v) > 0.0) ? rhs(0) / v : 0.0;
    out.theta = Vector::Constant(1, x);
  } else {
    Eigen::JacobiSVD<Matrix> svd(sigma, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double smax = sv.size() ? sv(0) : 0.0;
    const double cut = opts.rank_cutoff * smax;
    Vector utb = svd.matrixU().transpose() * rhs;
    for (Eigen::Index i = 0; i < sv.size(); ++i) utb(i) = (sv(i) > cut && sv(i) > 0.0) ? utb(i) / sv(i) : 0.0;
    out.theta = svd.matrixV() * utb;
  }
  out.residual = (sigma * out.theta - rhs).norm();
  out.consistent = std::isfinite(out.residual) && out.residual <= opts.residual_tol * std::max(1.0, rhs.norm());
  return out;
}

Vector markovian_mpr(const MarketModel& model, double t, const Vector& s, const MprOptions& opts) {
  if (!model.in_support(t, s)) throw SupportError("markovian_mpr: point outside the support region");
  MprSolution sol = min_norm_solve(model.sigma(t, s), model.mu(t, s), opts);
  if (!sol.consistent) {
    std::ostringstream os;
    os << "no market price of risk at t=" << t << ": residual " << sol.residual;
    throw ModelError(os.str());
  }
  return sol.theta;
}

MprField::MprField(MarketModel model, MprOptions opts) : model_(std::move(model)), opts_(opts) {
  const ModelKind kind = model_.kind();
  zero_ = kind == ModelKind::reciprocal_bessel || kind == ModelKind::two_driver;
  if (model_.constant_coefficients()) {
    constant_ = markovian_mpr(model_, 0.0, model_.initial_state(), opts_);
    zero_ = zero_ || constant_->isZero(0.0);
  }
}

Vector MprField::theta(double t, const Vector& s) const {
  if (zero_) return Vector::Zero(model_.drivers());
  if (constant_) return *constant_;
  if (model_.kind() == ModelKind::bessel_drift) return Vector::Constant(1, theta_1d(t, s(0)));
  return markovian_mpr(model_, t, s, opts_);
}

double MprField::norm_sq(double t, const Vector& s) const { return theta(t, s).squaredNorm(); }

double MprField::theta_1d(double t, double s) const {
  if (zero_) return 0.0;
  if (constant_) return (*constant_)(0);
  if (model_.kind() == ModelKind::bessel_drift) return 1.0 / (s - model_.bessel_c() * t);
  const Vector sv = Vector::Constant(1, s);
  return min_norm_solve(model_.sigma(t, sv), model_.mu(t, sv), opts_).theta(0);
}

double DeflatorState::z() const { return stopped ? 0.0 : std::exp(log_z); }

DeflatorState sdf_increment(const DeflatorState& state, const Vector& theta, const Vector& dw, double dt) {
  DeflatorState next = state;
  next.log_z -= theta.dot(dw) + 0.5 * theta.squaredNorm() * dt;
  return next;
}

DeflatorState sdf_increment(const DeflatorState& state, double theta, double dw, double dt) {
  DeflatorState next = state;
  next.log_z -= theta * dw + 0.5 * theta * theta * dt;
  return next;
}

namespace {

double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

ValidationReport validate_model(const MarketModel& model, const std::vector<ProbePoint>& probes,
                                const ValidationOptions& opts) {
  if (probes.empty()) throw ConfigError("validate_model: empty probe list");
  ValidationReport report;
  for (const ProbePoint& probe : probes) {
    if (probe.s.size() != model.dim()) throw ConfigError("validate_model: probe dimension mismatch");
    ProbeResult r;
    r.t = probe.t;
    r.s = probe.s;
    r.in_support = model.in_support(probe.t, probe.s);
    if (!r.in_support) {
      report.outside_support = true;
      report.probes.push_back(r);
      continue;
    }
    const Vector mu = model.mu(probe.t, probe.s);
    const Matrix sig = model.sigma(probe.t, probe.s);
    r.non_finite = !(finite(mu) && finite(sig));
    if (!r.non_finite) {
      const MprSolution sol = min_norm_solve(sig, mu, opts.mpr);
      r.mpr_residual = sol.residual;
      r.theta_norm = sol.theta.norm();
      r.mpr_inconsistent = !sol.consistent;
      r.min_eig_covariance = min_eigenvalue(sig * sig.transpose());
      r.min_eig_diffusion = min_eigenvalue(model.diffusion(probe.t, probe.s));
      r.degenerate = !(r.min_eig_covariance > opts.ellipticity_floor);

      // Forward differences in each state coordinate and in time, staying on support.
      const double h = opts.fd_step;
      double lt = 0.0, ls = 0.0;
      auto bump = [&](double t2, const Vector& s2) {
        if (!model.in_support(t2, s2)) return;
        const Matrix sig2 = model.sigma(t2, s2);
        const MprSolution sol2 = min_norm_solve(sig2, model.mu(t2, s2), opts.mpr);
        const double dist = std::sqrt((t2 - probe.t) * (t2 - probe.t) + (s2 - probe.s).squaredNorm());
        lt = std::max(lt, (sol2.theta - sol.theta).norm() / dist);
        ls = std::max(ls, (sig2 - sig).norm() / dist);
      };
      for (int i = 0; i < model.dim(); ++i) {
        Vector s2 = probe.s;
        s2(i) += h * std::max(1.0, std::abs(probe.s(i)));
        bump(probe.t, s2);
      }
      if (probe.t + h <= model.horizon()) bump(probe.t + h, probe.s);
      r.lipschitz_theta = lt;
      r.lipschitz_sigma = ls;
      r.non_finite = !(std::isfinite(lt) && std::isfinite(ls) && std::isfinite(r.mpr_residual));
    }
    report.mpr_inconsistent = report.mpr_inconsistent || r.mpr_inconsistent;
    report.degenerate = report.degenerate || r.degenerate;
    report.non_finite = report.non_finite || r.non_finite;
    report.probes.push_back(std::move(r));
  }
  return report;
}

}  // namespace arbhedge
