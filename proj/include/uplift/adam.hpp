#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "uplift/common.hpp"

namespace uplift {

// First/second moment accumulators, same layout as the flat parameters.
struct AdamState {
  std::vector<double> m, v;
  std::uint64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Standard Adam with bias correction:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
inline void adam_step(std::vector<double>& params, const std::vector<double>& grad,
                      AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  if (params.size() != grad.size() || params.size() != state.m.size()) {
    fail("adam_step: shape mismatch");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    double g = grad[k];
    state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
    state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
    double m_hat = state.m[k] / bc1;
    double v_hat = state.v[k] / bc2;
    params[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    if (!std::isfinite(params[k])) fail("adam_step: non-finite parameter at index ", k);
  }
}

}  // namespace uplift
