#pragma once

// Data-parallel inner loops of the path simulator and the hedging backtest.
// Each kernel has a scalar reference and optional AVX2 variant; the variants
// use only correctly rounded IEEE operations in the same order, so results are
// bit-identical whichever table is active.

#include <cstddef>
#include <string>

namespace arbhedge::kernels {

enum class Isa { scalar, avx2 };

std::string to_string(Isa isa);

struct KernelTable {
  Isa isa;
  // out[i] = in[i] * factor
  void (*scale)(std::size_t n, const double* in, double factor, double* out);
  // b += d per coordinate; radius = |b| for a 3d Brownian motion.
  void (*bessel3_step)(std::size_t n, double* b1, double* b2, double* b3, const double* d1, const double* d2,
                       const double* d3, double* radius);
  // Drift-implicit step of dX = (1/X - c) dt + dW, positive root of
  // X' = X - c dt + dW + dt / X'.
  void (*implicit_bessel_step)(std::size_t n, double* x, const double* dw, double drift_dt, double dt);
  // y += dw - shift
  void (*shifted_add)(std::size_t n, double* y, const double* dw, double shift);
  // out = factor / in
  void (*scaled_reciprocal)(std::size_t n, const double* in, double factor, double* out);
  // out = -2 y0 y1 * inv_var: log of the Brownian-bridge crossing probability.
  void (*bridge_exponent)(std::size_t n, const double* y0, const double* y1, double inv_var, double* out);
  // v += eta * (s_next - s_prev)
  void (*wealth_step)(std::size_t n, double* v, const double* eta, const double* s_prev, const double* s_next);
};

const KernelTable& scalar_kernels();
// nullptr when the AVX2 variants were not compiled in or the CPU lacks AVX2.
const KernelTable* avx2_kernels();
// Runtime selection; ARBHEDGE_SIMD=scalar forces the reference path.
const KernelTable& active_kernels();

}  // namespace arbhedge::kernels
