#include "polarcast/optim.hpp"

namespace polarcast {

namespace {

std::vector<std::vector<double>> zeros_like(const ModelParams& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.tensors.size());
  for (const auto& t : params.tensors) out.emplace_back(t.data.size(), 0.0);
  return out;
}

void require_finite(const ModelParams& params, const Gradients& grads) {
  if (grads.tensors.size() != params.tensors.size())
    throw ShapeError("gradient/parameter tensor count mismatch");
  for (std::size_t i = 0; i < grads.tensors.size(); ++i) {
    if (grads.tensors[i].size() != params.tensors[i].data.size())
      throw ShapeError("gradient shape mismatch for '" + params.tensors[i].name + "'");
    for (double g : grads.tensors[i])
      if (!std::isfinite(g))
        throw NonFiniteGradient("non-finite gradient in '" + params.tensors[i].name + "'");
  }
}

}  // namespace

SgdState make_sgd_state(const ModelParams& params) { return {zeros_like(params)}; }

AdamState make_adam_state(const ModelParams& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

void sgd_step(ModelParams& params, const Gradients& grads, SgdState& state, double lr,
              double momentum) {
  require_finite(params, grads);
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    sgd_update<float>(params.tensors[i].data, grads.tensors[i], state.velocity[i], lr, momentum);
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, const AdamHyper& h) {
  require_finite(params, grads);
  ++state.t;
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    adam_update<float>(params.tensors[i].data, grads.tensors[i], state.m[i], state.v[i], state.t, h);
}

}  // namespace polarcast
