#pragma once

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace arbhedge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ModelKind { bessel_drift, reciprocal_bessel, gbm, coefficient_table, two_driver, custom };

std::string to_string(ModelKind kind);

// Relative coefficients: dS_i = S_i (mu_i dt + sum_k sigma_ik dW_k).
struct ModelCoefficients {
  std::function<Vector(double, const Vector&)> mu;
  std::function<Matrix(double, const Vector&)> sigma;
  std::function<bool(double, const Vector&)> support;
};

// Immutable market description. Copies share the underlying coefficients, so a
// model can be handed to any number of workers.
class MarketModel {
 public:
  // Stock is S = X + ct with X a 3d Bessel process with drift -c; support {s > ct}.
  static MarketModel bessel_drift(double c, double s0, double horizon);
  // dS = -S^2 dW; P is already a (strict) local martingale measure, theta = 0.
  static MarketModel reciprocal_bessel(double s0, double horizon);
  static MarketModel gbm(Vector mu, Matrix sigma, Vector s0, double horizon);
  // d = 1 with piecewise-linear relative mu(s), sigma(s); flat outside the table.
  static MarketModel coefficient_table(std::vector<double> s_grid, std::vector<double> mu,
                                       std::vector<double> sigma, double s0, double horizon);
  // d = 1, K = 2, mu = 0, sigma = (1, 0): the two-driver comparison market.
  static MarketModel two_driver(double s0, double horizon);
  static MarketModel custom(std::string name, int d, int k, ModelCoefficients coefficients,
                            Vector s0, double horizon);

  const std::string& name() const;
  ModelKind kind() const;
  int dim() const;
  int drivers() const;
  double horizon() const;
  const Vector& initial_state() const;
  double initial_state_1d() const { return initial_state()(0); }
  bool constant_coefficients() const;
  const std::map<std::string, double>& params() const;

  Vector mu(double t, const Vector& s) const;
  Matrix sigma(double t, const Vector& s) const;
  bool in_support(double t, const Vector& s) const;
  bool in_support(double t, double s) const;
  // a = sigma sigma^T (relative covariance rate).
  Matrix covariance(double t, const Vector& s) const;
  // s_i s_j a_ij: the absolute diffusion matrix entering the pricing PDE.
  Matrix diffusion(double t, const Vector& s) const;
  // d = 1 shorthand for s^2 a(t, s).
  double diffusion_1d(double t, double s) const;

  // d = 1 models: support is {s > lower_boundary(t)}.
  double lower_boundary(double t) const;
  // True when 1/Z hits zero exactly when S reaches the lower boundary.
  bool absorption_is_first_passage() const;
  // Drift parameter c for the Bessel family (0 otherwise).
  double bessel_c() const;

 private:
  struct Impl;
  explicit MarketModel(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

// Build a catalogue model from a name and a flat parameter map.
MarketModel make_model(const std::string& name, const std::map<std::string, double>& params,
                       const std::map<std::string, std::vector<double>>& arrays = {});

struct MprOptions {
  double rank_cutoff = 1e-12;  // relative to the largest singular value
  double residual_tol = 1e-9;  // relative to max(1, |mu|)
};

struct MprSolution {
  Vector theta;
  double residual = 0.0;
  bool consistent = true;
};

// Minimum-norm least-squares solution of sigma x = rhs by SVD.
MprSolution min_norm_solve(const Matrix& sigma, const Vector& rhs, const MprOptions& opts = {});

// theta = sigma^T (sigma sigma^T)^+ mu at (t, s). Throws SupportError off support and
// ModelError when mu is not in the range of sigma.
Vector markovian_mpr(const MarketModel& model, double t, const Vector& s, const MprOptions& opts = {});

class MprField {
 public:
  explicit MprField(MarketModel model, MprOptions opts = {});

  const MarketModel& model() const { return model_; }
  Vector theta(double t, const Vector& s) const;
  double norm_sq(double t, const Vector& s) const;
  // d = K = 1 fast path (scalar pseudo-inverse).
  double theta_1d(double t, double s) const;
  bool identically_zero() const { return zero_; }

 private:
  MarketModel model_;
  MprOptions opts_;
  bool zero_ = false;
  std::optional<Vector> constant_;
};

struct DeflatorState {
  double log_z = 0.0;
  bool stopped = false;

  double z() const;
  static DeflatorState unit() { return {}; }
};

// One log-space step of Z = exp(-int theta dW - 1/2 int |theta|^2 du).
DeflatorState sdf_increment(const DeflatorState& state, const Vector& theta, const Vector& dw, double dt);
DeflatorState sdf_increment(const DeflatorState& state, double theta, double dw, double dt);

struct ProbePoint {
  double t = 0.0;
  Vector s;
};

struct ProbeResult {
  double t = 0.0;
  Vector s;
  double mpr_residual = 0.0;
  double theta_norm = 0.0;
  double min_eig_covariance = 0.0;  // smallest eigenvalue of a(t, s)
  double min_eig_diffusion = 0.0;   // smallest eigenvalue of s_i s_j a_ij(t, s)
  double lipschitz_theta = 0.0;
  double lipschitz_sigma = 0.0;
  bool in_support = true;
  bool mpr_inconsistent = false;
  bool degenerate = false;
  bool non_finite = false;
};

struct ValidationReport {
  std::vector<ProbeResult> probes;
  bool mpr_inconsistent = false;
  bool degenerate = false;
  bool non_finite = false;
  bool outside_support = false;

  bool ok() const { return !(mpr_inconsistent || non_finite || outside_support); }
};

struct ValidationOptions {
  MprOptions mpr;
  double fd_step = 1e-5;
  double ellipticity_floor = 1e-12;
};

// Samples MPR existence, local ellipticity and Lipschitz estimates at probe
// points. Advisory: a clean report does not prove the conditions hold.
ValidationReport validate_model(const MarketModel& model, const std::vector<ProbePoint>& probes,
                                const ValidationOptions& opts = {});

}  // namespace arbhedge
