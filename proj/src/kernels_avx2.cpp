#include "arbhedge/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

namespace arbhedge::kernels {
namespace {

constexpr std::size_t kLanes = 4;

void scale(std::size_t n, const double* in, double factor, double* out) {
  const __m256d f = _mm256_set1_pd(factor);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(in + i), f));
  scalar_kernels().scale(n - i, in + i, factor, out + i);
}

void bessel3_step(std::size_t n, double* b1, double* b2, double* b3, const double* d1, const double* d2,
                  const double* d3, double* radius) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d x = _mm256_add_pd(_mm256_loadu_pd(b1 + i), _mm256_loadu_pd(d1 + i));
    const __m256d y = _mm256_add_pd(_mm256_loadu_pd(b2 + i), _mm256_loadu_pd(d2 + i));
    const __m256d z = _mm256_add_pd(_mm256_loadu_pd(b3 + i), _mm256_loadu_pd(d3 + i));
    _mm256_storeu_pd(b1 + i, x);
    _mm256_storeu_pd(b2 + i, y);
    _mm256_storeu_pd(b3 + i, z);
    const __m256d sq = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(x, x), _mm256_mul_pd(y, y)), _mm256_mul_pd(z, z));
    _mm256_storeu_pd(radius + i, _mm256_sqrt_pd(sq));
  }
  scalar_kernels().bessel3_step(n - i, b1 + i, b2 + i, b3 + i, d1 + i, d2 + i, d3 + i, radius + i);
}

void implicit_bessel_step(std::size_t n, double* x, const double* dw, double drift_dt, double dt) {
  const __m256d shift = _mm256_set1_pd(drift_dt);
  const __m256d four_dt = _mm256_set1_pd(4.0 * dt);
  const __m256d two_dt = _mm256_set1_pd(2.0 * dt);
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d b = _mm256_add_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), shift), _mm256_loadu_pd(dw + i));
    const __m256d root = _mm256_sqrt_pd(_mm256_add_pd(_mm256_mul_pd(b, b), four_dt));
    const __m256d pos = _mm256_mul_pd(half, _mm256_add_pd(b, root));
    const __m256d neg = _mm256_div_pd(two_dt, _mm256_sub_pd(root, b));
    const __m256d take_pos = _mm256_cmp_pd(b, zero, _CMP_GE_OQ);
    _mm256_storeu_pd(x + i, _mm256_blendv_pd(neg, pos, take_pos));
  }
  scalar_kernels().implicit_bessel_step(n - i, x + i, dw + i, drift_dt, dt);
}

void shifted_add(std::size_t n, double* y, const double* dw, double shift) {
  const __m256d s = _mm256_set1_pd(shift);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d inc = _mm256_sub_pd(_mm256_loadu_pd(dw + i), s);
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), inc));
  }
  scalar_kernels().shifted_add(n - i, y + i, dw + i, shift);
}

void scaled_reciprocal(std::size_t n, const double* in, double factor, double* out) {
  const __m256d f = _mm256_set1_pd(factor);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) _mm256_storeu_pd(out + i, _mm256_div_pd(f, _mm256_loadu_pd(in + i)));
  scalar_kernels().scaled_reciprocal(n - i, in + i, factor, out + i);
}

void bridge_exponent(std::size_t n, const double* y0, const double* y1, double inv_var, double* out) {
  const __m256d m2 = _mm256_set1_pd(-2.0);
  const __m256d iv = _mm256_set1_pd(inv_var);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d p = _mm256_mul_pd(_mm256_mul_pd(m2, _mm256_loadu_pd(y0 + i)), _mm256_loadu_pd(y1 + i));
    _mm256_storeu_pd(out + i, _mm256_mul_pd(p, iv));
  }
  scalar_kernels().bridge_exponent(n - i, y0 + i, y1 + i, inv_var, out + i);
}

void wealth_step(std::size_t n, double* v, const double* eta, const double* s_prev, const double* s_next) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d ds = _mm256_sub_pd(_mm256_loadu_pd(s_next + i), _mm256_loadu_pd(s_prev + i));
    const __m256d inc = _mm256_mul_pd(_mm256_loadu_pd(eta + i), ds);
    _mm256_storeu_pd(v + i, _mm256_add_pd(_mm256_loadu_pd(v + i), inc));
  }
  scalar_kernels().wealth_step(n - i, v + i, eta + i, s_prev + i, s_next + i);
}

}  // namespace

const KernelTable* avx2_kernels_compiled() {
  static const KernelTable table{Isa::avx2,   scale,           bessel3_step, implicit_bessel_step,
                                 shifted_add, scaled_reciprocal, bridge_exponent, wealth_step};
  return &table;
}

}  // namespace arbhedge::kernels

#else

namespace arbhedge::kernels {
const KernelTable* avx2_kernels_compiled() { return nullptr; }
}  // namespace arbhedge::kernels

#endif
