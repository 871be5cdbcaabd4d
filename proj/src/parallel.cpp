#include "polarcast/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <optional>

#include "polarcast/rng.hpp"

namespace polarcast {

GradientWorkspace::GradientWorkspace(const Network& net)
    : chunks_(kGradientChunks, net.zero_gradients()) {}

namespace {

double run_chunk(const Network& net, const ModelParams& params,
                 std::span<const Window* const> batch, std::size_t begin, std::size_t end,
                 std::uint64_t mask_seed, Gradients& g) {
  g.zero();
  double loss = 0.0;
  for (std::size_t j = begin; j < end; ++j) {
    const Window& w = *batch[j];
    const double y = target_of(w.label);
    std::optional<Rng> rng;
    if (net.arch().dropout_enabled) rng.emplace(derive_seed(mask_seed, j));
    auto fw = net.forward(params, w.values, Mode::Train, rng ? &*rng : nullptr);
    loss += bce_loss(fw.p, y);
    net.backward(params, *fw.cache, bce_grad_logit(fw.p, y), g);
  }
  return loss;
}

}  // namespace

double batch_gradients(const Network& net, const ModelParams& params,
                       std::span<const Window* const> batch, std::uint64_t mask_seed,
                       ExecMode mode, GradientWorkspace& ws, Gradients& out) {
  const std::size_t n = batch.size();
  const std::size_t per = (n + kGradientChunks - 1) / kGradientChunks;
  auto& chunks = ws.chunks();
  double losses[kGradientChunks] = {};

  if (mode == ExecMode::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t c = 0; c < kGradientChunks; ++c) {
      const std::size_t b = std::min(n, c * per), e = std::min(n, b + per);
      losses[c] = run_chunk(net, params, batch, b, e, mask_seed, chunks[c]);
    }
  } else {
    for (std::size_t c = 0; c < kGradientChunks; ++c) {
      const std::size_t b = std::min(n, c * per), e = std::min(n, b + per);
      losses[c] = run_chunk(net, params, batch, b, e, mask_seed, chunks[c]);
    }
  }

  out = chunks[0];
  double loss = losses[0];
  for (std::size_t c = 1; c < kGradientChunks; ++c) {
    out.add(chunks[c]);
    loss += losses[c];
  }
  return loss;
}

std::vector<double> predict_batch(const Network& net, const ModelParams& params,
                                  std::span<const Window> windows, ExecMode mode) {
  std::vector<double> p(windows.size());
  const auto n = static_cast<std::ptrdiff_t>(windows.size());
  if (mode == ExecMode::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = net.predict(params, windows[i].values);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = net.predict(params, windows[i].values);
  }
  return p;
}

int available_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace polarcast
