#include "arbhedge/normal.hpp"

#include <cmath>

namespace arbhedge {

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double log_norm_cdf(double x) {
  if (x > -30.0) return std::log(norm_cdf(x));
  // Mills-ratio asymptotic series; five terms is well below 1e-16 relative here.
  const double z2 = 1.0 / (x * x);
  const double series =
      1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2)));
  return -0.5 * x * x - std::log(-x) + std::log(kInvSqrt2Pi) + std::log(series);
}

}  // namespace arbhedge
