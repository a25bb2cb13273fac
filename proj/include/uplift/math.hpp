#pragma once

#include <cmath>

namespace uplift {

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow on either tail.
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// -log(sigmoid(x)) = softplus(-x), the fused form used for cross-entropy.
inline double log_sigmoid(double x) { return -softplus(-x); }

inline constexpr double kTwoPi = 6.28318530717958647692;
inline constexpr double kHalfLogTwoPi = 0.91893853320467274178;  // 0.5*log(2*pi)

}  // namespace uplift
