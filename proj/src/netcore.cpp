#include "polarcast/netcore.hpp"

#include <algorithm>
#include <cmath>

#include "polarcast/kernels.hpp"

namespace polarcast {

namespace {

constexpr std::size_t kConvBlocks = 5;
constexpr std::size_t kDenseLayers = 2;
constexpr std::size_t kDense0 = 2 * kConvBlocks;
constexpr std::size_t kDense1 = kDense0 + 2;

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::vector<std::uint8_t> draw_mask(std::size_t n, double rate, Rng& rng) {
  std::vector<std::uint8_t> mask(n);
  const double keep = 1.0 - rate;
  for (auto& m : mask) m = rng.bernoulli(keep) ? 1 : 0;
  return mask;
}

void apply_mask(std::span<const double> in, std::span<const std::uint8_t> mask, double scale,
                std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = mask[i] ? in[i] * scale : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config / params
// ---------------------------------------------------------------------------

void ArchConfig::validate() const {
  if (conv_channels.size() != kConvBlocks)
    throw ShapeError("architecture needs exactly 5 convolutional layers");
  if (dense_widths.size() != kDenseLayers)
    throw ShapeError("architecture needs exactly 2 dense layers");
  if (dense_widths[1] != 1) throw ShapeError("the output dense layer must have width 1");
  if (dense_widths[0] == 0) throw ShapeError("hidden dense width must be positive");
  for (auto c : conv_channels)
    if (c == 0) throw ShapeError("conv channel counts must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0)
    throw ShapeError("kernel_size must be a positive odd integer");
  if (dropout_enabled && dropout_rate != 0.5)
    throw ShapeError("dropout_rate must be 0.5 when dropout is enabled");
  if (window_len == 0) throw ShapeError("window_len must be positive");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.data.size();
  return n;
}

const Tensor* ModelParams::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors)
    for (float v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

void Gradients::zero() {
  for (auto& t : tensors) std::fill(t.begin(), t.end(), 0.0);
}

void Gradients::scale(double s) {
  for (auto& t : tensors)
    for (auto& v : t) v *= s;
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    for (std::size_t j = 0; j < tensors[i].size(); ++j) tensors[i][j] += other.tensors[i][j];
}

bool Gradients::all_finite() const {
  for (const auto& t : tensors)
    for (double v : t)
      if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::Network(ArchConfig arch) : arch_(std::move(arch)) {
  arch_.validate();
  std::size_t channels = 1;
  std::size_t length = arch_.window_len;
  for (std::size_t i = 0; i < kConvBlocks; ++i) {
    LayerShape s{};
    s.in_channels = channels;
    s.in_length = length;
    s.out_channels = arch_.conv_channels[i];
    if (length < arch_.kernel_size)
      throw ShapeError("conv block " + std::to_string(i) + ": length " + std::to_string(length) +
                       " is shorter than the kernel");
    s.conv_length = length - arch_.kernel_size + 1;
    s.pooled = arch_.pool_every_block || i + 1 == kConvBlocks;
    if (s.pooled && s.conv_length < 2)
      throw ShapeError("conv block " + std::to_string(i) + ": length " +
                       std::to_string(s.conv_length) + " is too short to pool");
    s.out_length = s.pooled ? s.conv_length / 2 : s.conv_length;
    layers_.push_back(s);
    channels = s.out_channels;
    length = s.out_length;
  }
  if (length < 1) throw ShapeError("spatial length after pooling is zero");
  flat_size_ = channels * length;
}

ModelParams Network::zero_params() const {
  ModelParams p;
  const std::size_t k = arch_.kernel_size;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string base = "conv" + std::to_string(i);
    p.tensors.push_back({base + ".weight", {l.out_channels, l.in_channels, k},
                         std::vector<float>(l.out_channels * l.in_channels * k, 0.0f)});
    p.tensors.push_back({base + ".bias", {l.out_channels}, std::vector<float>(l.out_channels, 0.0f)});
  }
  const std::size_t hidden = arch_.dense_widths[0];
  p.tensors.push_back({"dense0.weight", {hidden, flat_size_},
                       std::vector<float>(hidden * flat_size_, 0.0f)});
  p.tensors.push_back({"dense0.bias", {hidden}, std::vector<float>(hidden, 0.0f)});
  p.tensors.push_back({"dense1.weight", {1, hidden}, std::vector<float>(hidden, 0.0f)});
  p.tensors.push_back({"dense1.bias", {1}, std::vector<float>(1, 0.0f)});
  return p;
}

ModelParams Network::init_params(std::uint64_t seed) const {
  ModelParams p = zero_params();
  Rng rng(derive_seed(seed, 0x1a17));
  for (auto& t : p.tensors) {
    if (t.shape.size() < 2) continue;  // biases stay zero
    double fan_in, fan_out;
    if (t.shape.size() == 3) {
      fan_in = static_cast<double>(t.shape[1] * t.shape[2]);
      fan_out = static_cast<double>(t.shape[0] * t.shape[2]);
    } else {
      fan_in = static_cast<double>(t.shape[1]);
      fan_out = static_cast<double>(t.shape[0]);
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& w : t.data) {
      float v = static_cast<float>(rng.uniform(-bound, bound));
      // float rounding may step just past the bound
      while (std::fabs(static_cast<double>(v)) > bound) v = std::nextafter(v, 0.0f);
      w = v;
    }
  }
  return p;
}

Gradients Network::zero_gradients() const {
  Gradients g;
  for (const auto& t : zero_params().tensors) g.tensors.emplace_back(t.data.size(), 0.0);
  return g;
}

void Network::check(const ModelParams& params) const {
  const ModelParams ref = zero_params();
  if (params.tensors.size() != ref.tensors.size())
    throw ShapeError("parameter set has " + std::to_string(params.tensors.size()) +
                     " tensors, architecture expects " + std::to_string(ref.tensors.size()));
  for (std::size_t i = 0; i < ref.tensors.size(); ++i) {
    const auto& a = params.tensors[i];
    const auto& b = ref.tensors[i];
    if (a.name != b.name || a.shape != b.shape || a.data.size() != b.data.size())
      throw ShapeError("tensor '" + a.name + "' " + shape_string(a.shape) + " does not match '" +
                       b.name + "' " + shape_string(b.shape));
  }
}

double Network::predict(const ModelParams& params, std::span<const float> window) const {
  return run(params, window, false, nullptr, nullptr).p;
}

ForwardResult Network::forward(const ModelParams& params, std::span<const float> window, Mode mode,
                               Rng* rng) const {
  return run(params, window, mode == Mode::Train, rng, nullptr);
}

ForwardResult Network::forward(const ModelParams& params, std::span<const float> window,
                               const DropoutMasks& masks) const {
  return run(params, window, true, nullptr, &masks);
}

ForwardResult Network::run(const ModelParams& params, std::span<const float> window, bool train,
                           Rng* rng, const DropoutMasks* fixed) const {
  if (window.size() != arch_.window_len)
    throw ShapeError("window has " + std::to_string(window.size()) + " samples, model expects " +
                     std::to_string(arch_.window_len));
  const auto& T = params.tensors;
  const std::size_t k = arch_.kernel_size;

  ForwardResult result;
  ForwardCache cache;
  if (train) cache.blocks.resize(layers_.size());

  std::vector<double> x(window.begin(), window.end());
  std::vector<double> conv;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    conv.assign(l.out_channels * l.conv_length, 0.0);
    kernels::conv1d_forward(x, l.in_channels, l.in_length, T[2 * i].data, T[2 * i + 1].data,
                            l.out_channels, k, conv);
    kernels::relu_inplace(conv);
    std::vector<double> out;
    std::vector<std::uint32_t> argmax;
    if (l.pooled) {
      out.resize(l.out_channels * l.out_length);
      argmax.resize(out.size());
      kernels::maxpool2_forward(conv, l.out_channels, l.conv_length, out, argmax);
    } else {
      out = conv;
    }
    if (train) {
      auto& b = cache.blocks[i];
      b.input = std::move(x);
      b.activated = conv;
      b.argmax = std::move(argmax);
    }
    x = std::move(out);
  }

  const bool drop = train && arch_.dropout_enabled;
  const double scale = 1.0 / (1.0 - arch_.dropout_rate);
  const std::size_t hidden_n = arch_.dense_widths[0];

  std::vector<double> hidden_input(x.size());
  if (drop) {
    if (fixed) {
      if (fixed->before_hidden.size() != x.size())
        throw ShapeError("dropout mask size mismatch before hidden layer");
      cache.masks.before_hidden = fixed->before_hidden;
    } else {
      if (!rng) throw std::invalid_argument("train-mode dropout needs an rng");
      cache.masks.before_hidden = draw_mask(x.size(), arch_.dropout_rate, *rng);
    }
    apply_mask(x, cache.masks.before_hidden, scale, hidden_input);
  } else {
    hidden_input = x;
  }

  std::vector<double> hidden(hidden_n);
  kernels::dense_forward(hidden_input, T[kDense0].data, T[kDense0 + 1].data, hidden);
  kernels::relu_inplace(hidden);

  std::vector<double> output_input(hidden_n);
  if (drop) {
    if (fixed) {
      if (fixed->before_output.size() != hidden_n)
        throw ShapeError("dropout mask size mismatch before output layer");
      cache.masks.before_output = fixed->before_output;
    } else {
      cache.masks.before_output = draw_mask(hidden_n, arch_.dropout_rate, *rng);
    }
    apply_mask(hidden, cache.masks.before_output, scale, output_input);
  } else {
    output_input = hidden;
  }

  double logit = 0.0;
  kernels::dense_forward(output_input, T[kDense1].data, T[kDense1 + 1].data,
                         std::span<double>(&logit, 1));
  result.logit = logit;
  result.p = kernels::sigmoid(logit);

  if (train) {
    cache.flat = std::move(x);
    cache.hidden_input = std::move(hidden_input);
    cache.hidden = std::move(hidden);
    cache.output_input = std::move(output_input);
    result.cache = std::move(cache);
  }
  return result;
}

void Network::backward(const ModelParams& params, const ForwardCache& cache, double dlogit,
                       Gradients& grads) const {
  if (cache.blocks.size() != layers_.size())
    throw std::invalid_argument("backward needs a cache from a train-mode forward");
  const auto& T = params.tensors;
  auto& G = grads.tensors;
  const std::size_t k = arch_.kernel_size;
  const bool drop = arch_.dropout_enabled && !cache.masks.before_hidden.empty();
  const double scale = 1.0 / (1.0 - arch_.dropout_rate);
  const std::size_t hidden_n = arch_.dense_widths[0];

  std::vector<double> d_output_input(hidden_n);
  kernels::dense_backward(cache.output_input, T[kDense1].data, std::span<const double>(&dlogit, 1),
                          d_output_input, G[kDense1], G[kDense1 + 1]);

  std::vector<double> d_hidden(hidden_n);
  if (drop)
    apply_mask(d_output_input, cache.masks.before_output, scale, d_hidden);
  else
    d_hidden = d_output_input;
  kernels::relu_backward_inplace(cache.hidden, d_hidden);

  std::vector<double> d_hidden_input(flat_size_);
  kernels::dense_backward(cache.hidden_input, T[kDense0].data, d_hidden, d_hidden_input,
                          G[kDense0], G[kDense0 + 1]);

  std::vector<double> d_out(flat_size_);
  if (drop)
    apply_mask(d_hidden_input, cache.masks.before_hidden, scale, d_out);
  else
    d_out = std::move(d_hidden_input);

  std::vector<double> d_conv, d_in;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = layers_[i];
    const auto& b = cache.blocks[i];
    if (l.pooled) {
      d_conv.resize(l.out_channels * l.conv_length);
      kernels::maxpool2_backward(d_out, l.out_channels, l.conv_length, b.argmax, d_conv);
    } else {
      d_conv = d_out;
    }
    kernels::relu_backward_inplace(b.activated, d_conv);
    if (i > 0) {
      d_in.resize(l.in_channels * l.in_length);
    } else {
      d_in.clear();
    }
    kernels::conv1d_backward(b.input, l.in_channels, l.in_length, T[2 * i].data, l.out_channels,
                             k, d_conv, d_in, G[2 * i], G[2 * i + 1]);
    d_out.swap(d_in);
  }
}

// ---------------------------------------------------------------------------
// Stand-alone layer operations
// ---------------------------------------------------------------------------

Signal conv1d_forward(const Signal& x, std::span<const float> w, std::span<const float> b,
                      std::size_t out_channels, std::size_t kernel_size) {
  if (kernel_size == 0 || x.length < kernel_size)
    throw ShapeError("conv1d: input length shorter than kernel");
  if (w.size() != out_channels * x.channels * kernel_size)
    throw ShapeError("conv1d: weight shape does not match (out, in, kernel)");
  if (b.size() != out_channels) throw ShapeError("conv1d: bias size mismatch");
  if (x.data.size() != x.channels * x.length) throw ShapeError("conv1d: input buffer size mismatch");
  Signal out{out_channels, x.length - kernel_size + 1, {}};
  out.data.resize(out.channels * out.length);
  kernels::conv1d_forward(x.data, x.channels, x.length, w, b, out_channels, kernel_size, out.data);
  return out;
}

PoolResult maxpool1d_forward(const Signal& x) {
  if (x.length < 2) throw ShapeError("maxpool1d: length must be at least 2");
  PoolResult r;
  r.out = {x.channels, x.length / 2, {}};
  r.out.data.resize(r.out.channels * r.out.length);
  r.argmax.resize(r.out.data.size());
  kernels::maxpool2_forward(x.data, x.channels, x.length, r.out.data, r.argmax);
  return r;
}

std::vector<double> relu(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  kernels::relu_inplace(out);
  return out;
}

double sigmoid(double z) { return kernels::sigmoid(z); }

std::vector<double> dense_forward(std::span<const double> x, std::span<const float> w,
                                  std::span<const float> b) {
  if (x.empty() || w.size() % x.size() != 0) throw ShapeError("dense: weight/input mismatch");
  if (b.size() != w.size() / x.size()) throw ShapeError("dense: bias size mismatch");
  std::vector<double> y(b.size());
  kernels::dense_forward(x, w, b, y);
  return y;
}

DropoutResult dropout_apply(std::span<const double> x, double rate, DropoutMode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  DropoutResult r;
  if (mode == DropoutMode::Eval || rate == 0.0) {
    r.values.assign(x.begin(), x.end());
    r.mask.assign(x.size(), 1);
    return r;
  }
  r.mask = draw_mask(x.size(), rate, rng);
  r.values.resize(x.size());
  apply_mask(x, r.mask, 1.0 / (1.0 - rate), r.values);
  return r;
}

double bce_loss(double p, double y) {
  const double q = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

double example_loss(const Network& net, const ModelParams& params, std::span<const float> window,
                    double y, const DropoutMasks& masks) {
  return bce_loss(net.forward(params, window, masks).p, y);
}

}  // namespace polarcast
