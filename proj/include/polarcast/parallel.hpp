#pragma once

// Data-parallel batch kernels. Every operation has a serial Reference mode and
// an OpenMP Parallel mode. Work is cut into a fixed number of chunks that do
// not depend on the thread count, and partial results are reduced in chunk
// order, so both modes return bitwise-identical results.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "polarcast/netcore.hpp"
#include "polarcast/types.hpp"

namespace polarcast {

enum class ExecMode { Reference, Parallel };

inline constexpr std::size_t kGradientChunks = 16;

// Reusable per-chunk gradient buffers.
class GradientWorkspace {
 public:
  explicit GradientWorkspace(const Network& net);
  std::vector<Gradients>& chunks() { return chunks_; }

 private:
  std::vector<Gradients> chunks_;
};

// Sums per-example BCE gradients over `batch` into `out` (overwritten; not
// averaged) and returns the summed loss. The dropout mask of example j is drawn
// from Rng(derive_seed(mask_seed, j)), so masks do not depend on scheduling.
double batch_gradients(const Network& net, const ModelParams& params,
                       std::span<const Window* const> batch, std::uint64_t mask_seed,
                       ExecMode mode, GradientWorkspace& ws, Gradients& out);

// Eval-mode predictions, one per window.
std::vector<double> predict_batch(const Network& net, const ModelParams& params,
                                  std::span<const Window> windows, ExecMode mode);

int available_threads();

}  // namespace polarcast
