#pragma once

namespace arbhedge {

inline constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;
inline constexpr double kInvSqrt2 = 0.707106781186547524400844362105;

double norm_pdf(double x);

// Standard normal CDF through erfc, accurate in both tails.
double norm_cdf(double x);

// log(norm_cdf(x)), finite for arbitrarily negative x.
double log_norm_cdf(double x);

}  // namespace arbhedge
