#include "arbhedge/kernels.hpp"

#include <cmath>

namespace arbhedge::kernels {
namespace {

void scale(std::size_t n, const double* in, double factor, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] * factor;
}

void bessel3_step(std::size_t n, double* b1, double* b2, double* b3, const double* d1, const double* d2,
                  const double* d3, double* radius) {
  for (std::size_t i = 0; i < n; ++i) {
    b1[i] += d1[i];
    b2[i] += d2[i];
    b3[i] += d3[i];
    radius[i] = std::sqrt(b1[i] * b1[i] + b2[i] * b2[i] + b3[i] * b3[i]);
  }
}

void implicit_bessel_step(std::size_t n, double* x, const double* dw, double drift_dt, double dt) {
  const double four_dt = 4.0 * dt;
  const double two_dt = 2.0 * dt;
  for (std::size_t i = 0; i < n; ++i) {
    const double b = (x[i] - drift_dt) + dw[i];
    const double root = std::sqrt(b * b + four_dt);
    // Two algebraically equal branches; pick the one without cancellation.
    x[i] = b >= 0.0 ? 0.5 * (b + root) : two_dt / (root - b);
  }
}

void shifted_add(std::size_t n, double* y, const double* dw, double shift) {
  for (std::size_t i = 0; i < n; ++i) y[i] += dw[i] - shift;
}

void scaled_reciprocal(std::size_t n, const double* in, double factor, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = factor / in[i];
}

void bridge_exponent(std::size_t n, const double* y0, const double* y1, double inv_var, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = -2.0 * y0[i] * y1[i] * inv_var;
}

void wealth_step(std::size_t n, double* v, const double* eta, const double* s_prev, const double* s_next) {
  for (std::size_t i = 0; i < n; ++i) v[i] += eta[i] * (s_next[i] - s_prev[i]);
}

}  // namespace

std::string to_string(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar,         scale,           bessel3_step, implicit_bessel_step,
                                 shifted_add,         scaled_reciprocal, bridge_exponent, wealth_step};
  return table;
}

}  // namespace arbhedge::kernels
