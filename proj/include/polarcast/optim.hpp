#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "polarcast/netcore.hpp"

namespace polarcast {

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SgdState {
  std::vector<std::vector<double>> velocity;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;
};

struct AdamHyper {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 0.01;
};

// Element-wise updates. T is the parameter storage type (float for models,
// double for the unit oracles); the arithmetic is always double.

// v <- momentum*v + g ; p <- p - lr*v
template <typename T>
void sgd_update(std::span<T> params, std::span<const double> grads, std::span<double> velocity,
                double lr, double momentum) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * velocity[i]);
  }
}

// Bias-corrected ADAM at step t (t >= 1).
template <typename T>
void adam_update(std::span<T> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, std::uint64_t t, const AdamHyper& h) {
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    params[i] = static_cast<T>(static_cast<double>(params[i]) - h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon));
  }
}

SgdState make_sgd_state(const ModelParams& params);
AdamState make_adam_state(const ModelParams& params);

// Whole-model steps. Both throw NonFiniteGradient (leaving params untouched)
// when any gradient is NaN/inf.
void sgd_step(ModelParams& params, const Gradients& grads, SgdState& state, double lr,
              double momentum);
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, const AdamHyper& h);

}  // namespace polarcast
