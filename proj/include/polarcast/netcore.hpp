#pragma once

// The fixed polarity CNN:
//
//   [conv -> relu -> maxpool/2] x 5 -> flatten -> (dropout) -> dense -> relu
//     -> (dropout) -> dense(1) -> sigmoid
//
// With pool_every_block == false a single maxpool follows the last conv block.
// Forward and backward passes are written by hand and checked against finite
// differences (gradient_check in tests/acceptance.cpp).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polarcast/rng.hpp"
#include "polarcast/types.hpp"

namespace polarcast {

struct ArchConfig {
  std::size_t window_len = 400;
  std::vector<std::size_t> conv_channels = {16, 32, 64, 64, 128};
  std::size_t kernel_size = 3;
  bool pool_every_block = true;
  std::vector<std::size_t> dense_widths = {32, 1};
  bool dropout_enabled = false;
  double dropout_rate = 0.5;

  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

// Named float32 tensor. Conv weights are (out_channels, in_channels, kernel),
// dense weights are (out_units, in_units), biases are (units).
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;
};

struct ModelParams {
  std::vector<Tensor> tensors;

  std::size_t parameter_count() const;
  const Tensor* find(std::string_view name) const;
  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;
};

// Gradient buffers parallel to ModelParams::tensors.
struct Gradients {
  std::vector<std::vector<double>> tensors;

  void zero();
  void scale(double s);
  void add(const Gradients& other);
  bool all_finite() const;
};

enum class Mode { Train, Eval };

struct DropoutMasks {
  std::vector<std::uint8_t> before_hidden;  // applied to the flattened features
  std::vector<std::uint8_t> before_output;  // applied to the hidden dense output
};

struct ConvBlockCache {
  std::vector<double> input;      // in_ch x in_len
  std::vector<double> activated;  // out_ch x conv_len, post-ReLU
  std::vector<std::uint32_t> argmax;
};

struct ForwardCache {
  std::vector<ConvBlockCache> blocks;
  std::vector<double> flat;          // before dropout
  std::vector<double> hidden_input;  // after dropout
  std::vector<double> hidden;        // post-ReLU
  std::vector<double> output_input;  // after dropout
  DropoutMasks masks;
};

struct ForwardResult {
  double logit = 0.0;
  double p = 0.5;
  std::optional<ForwardCache> cache;  // populated iff Mode::Train
};

struct LayerShape {
  std::size_t in_channels, in_length;
  std::size_t out_channels, conv_length;
  bool pooled;
  std::size_t out_length;  // after pooling (== conv_length when not pooled)
};

class Network {
 public:
  // Throws ShapeError when the spatial bookkeeping does not work out.
  explicit Network(ArchConfig arch);

  const ArchConfig& arch() const { return arch_; }
  const std::vector<LayerShape>& conv_layers() const { return layers_; }
  std::size_t flat_size() const { return flat_size_; }

  // Glorot-uniform weights, zero biases.
  ModelParams init_params(std::uint64_t seed) const;
  ModelParams zero_params() const;
  Gradients zero_gradients() const;
  // Throws ShapeError when params do not match this architecture.
  void check(const ModelParams& params) const;

  // Eval mode. Pure function of (params, window).
  double predict(const ModelParams& params, std::span<const float> window) const;

  // Train mode draws fresh dropout masks from `rng` (required when dropout is
  // enabled) and fills the cache.
  ForwardResult forward(const ModelParams& params, std::span<const float> window, Mode mode,
                        Rng* rng = nullptr) const;

  // Train-mode forward with caller-supplied dropout masks.
  ForwardResult forward(const ModelParams& params, std::span<const float> window,
                        const DropoutMasks& masks) const;

  // Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logit).
  void backward(const ModelParams& params, const ForwardCache& cache, double dlogit,
                Gradients& grads) const;

 private:
  ForwardResult run(const ModelParams& params, std::span<const float> window, bool train,
                    Rng* rng, const DropoutMasks* fixed) const;

  ArchConfig arch_;
  std::vector<LayerShape> layers_;
  std::size_t flat_size_ = 0;
};

// ---------------------------------------------------------------------------
// Stand-alone layer operations (value-semantic wrappers over the kernels).
// ---------------------------------------------------------------------------

// Channel-major 2-D signal.
struct Signal {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> data;
};

Signal conv1d_forward(const Signal& x, std::span<const float> w, std::span<const float> b,
                      std::size_t out_channels, std::size_t kernel_size);

struct PoolResult {
  Signal out;
  std::vector<std::uint32_t> argmax;
};

PoolResult maxpool1d_forward(const Signal& x);

std::vector<double> relu(std::span<const double> x);
double sigmoid(double z);

std::vector<double> dense_forward(std::span<const double> x, std::span<const float> w,
                                  std::span<const float> b);

enum class DropoutMode { Train, Eval };

struct DropoutResult {
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
};

// Inverted dropout: kept units are scaled by 1/(1-rate) in train mode.
DropoutResult dropout_apply(std::span<const double> x, double rate, DropoutMode mode, Rng& rng);

inline constexpr double kBceEpsilon = 1e-7;

// Binary cross-entropy with p clamped to [eps, 1-eps].
double bce_loss(double p, double y);
// Fused sigmoid + BCE gradient with respect to the logit.
inline double bce_grad_logit(double p, double y) { return p - y; }

// Loss for one example with frozen dropout masks; used by gradient checks.
double example_loss(const Network& net, const ModelParams& params, std::span<const float> window,
                    double y, const DropoutMasks& masks);

}  // namespace polarcast
