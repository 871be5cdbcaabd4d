#include "polarcast/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace polarcast::kernels {

namespace {

// Dot product with four independent accumulators so the loop vectorizes
// without -ffast-math. The summation order is fixed, hence deterministic.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline double dot(const float* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * b[i];
    s1 += static_cast<double>(a[i + 1]) * b[i + 1];
    s2 += static_cast<double>(a[i + 2]) * b[i + 2];
    s3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

void conv1d_forward(std::span<const double> x, std::size_t in_ch, std::size_t len,
                    std::span<const float> w, std::span<const float> b, std::size_t out_ch,
                    std::size_t k, std::span<double> out) {
  const std::size_t out_len = len - k + 1;
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    double* o = out.data() + oc * out_len;
    const double bias = b[oc];
    for (std::size_t i = 0; i < out_len; ++i) o[i] = bias;
    for (std::size_t ic = 0; ic < in_ch; ++ic) {
      const double* xi = x.data() + ic * len;
      const float* wk = w.data() + (oc * in_ch + ic) * k;
      for (std::size_t j = 0; j < k; ++j) {
        const double wj = wk[j];
        const double* xs = xi + j;
        for (std::size_t i = 0; i < out_len; ++i) o[i] += wj * xs[i];
      }
    }
  }
}

void conv1d_forward_reference(std::span<const double> x, std::size_t in_ch, std::size_t len,
                              std::span<const float> w, std::span<const float> b,
                              std::size_t out_ch, std::size_t k, std::span<double> out) {
  const std::size_t out_len = len - k + 1;
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    for (std::size_t i = 0; i < out_len; ++i) {
      double acc = b[oc];
      for (std::size_t ic = 0; ic < in_ch; ++ic)
        for (std::size_t j = 0; j < k; ++j)
          acc += static_cast<double>(w[(oc * in_ch + ic) * k + j]) * x[ic * len + i + j];
      out[oc * out_len + i] = acc;
    }
  }
}

void conv1d_backward(std::span<const double> x, std::size_t in_ch, std::size_t len,
                     std::span<const float> w, std::size_t out_ch, std::size_t k,
                     std::span<const double> dout, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  const std::size_t out_len = len - k + 1;
  if (!dx.empty())
    for (auto& v : dx) v = 0.0;
  for (std::size_t oc = 0; oc < out_ch; ++oc) {
    const double* g = dout.data() + oc * out_len;
    double bsum = 0.0;
    for (std::size_t i = 0; i < out_len; ++i) bsum += g[i];
    db[oc] += bsum;
    for (std::size_t ic = 0; ic < in_ch; ++ic) {
      const double* xi = x.data() + ic * len;
      double* dwk = dw.data() + (oc * in_ch + ic) * k;
      const float* wk = w.data() + (oc * in_ch + ic) * k;
      for (std::size_t j = 0; j < k; ++j) {
        dwk[j] += dot(g, xi + j, out_len);
        if (!dx.empty()) {
          const double wj = wk[j];
          double* dxs = dx.data() + ic * len + j;
          for (std::size_t i = 0; i < out_len; ++i) dxs[i] += wj * g[i];
        }
      }
    }
  }
}

void maxpool2_forward(std::span<const double> x, std::size_t ch, std::size_t len,
                      std::span<double> out, std::span<std::uint32_t> argmax) {
  const std::size_t out_len = len / 2;
  for (std::size_t c = 0; c < ch; ++c) {
    const double* xc = x.data() + c * len;
    for (std::size_t i = 0; i < out_len; ++i) {
      const std::size_t a = 2 * i;
      const std::size_t pick = xc[a + 1] > xc[a] ? a + 1 : a;
      out[c * out_len + i] = xc[pick];
      argmax[c * out_len + i] = static_cast<std::uint32_t>(pick);
    }
  }
}

void maxpool2_backward(std::span<const double> dout, std::size_t ch, std::size_t len,
                       std::span<const std::uint32_t> argmax, std::span<double> dx) {
  const std::size_t out_len = len / 2;
  for (auto& v : dx) v = 0.0;
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t i = 0; i < out_len; ++i)
      dx[c * len + argmax[c * out_len + i]] += dout[c * out_len + i];
}

void dense_forward(std::span<const double> x, std::span<const float> w, std::span<const float> b,
                   std::span<double> y) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < y.size(); ++o) {
    y[o] = dot(w.data() + o * in, x.data(), in) + b[o];
  }
}

void dense_forward_reference(std::span<const double> x, std::span<const float> w,
                             std::span<const float> b, std::span<double> y) {
  for (std::size_t o = 0; o < y.size(); ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += w[o * x.size() + i] * x[i];
    y[o] = acc + b[o];
  }
}

void dense_backward(std::span<const double> x, std::span<const float> w,
                    std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                    std::span<double> db) {
  const std::size_t in = x.size();
  if (!dx.empty())
    for (auto& v : dx) v = 0.0;
  for (std::size_t o = 0; o < dy.size(); ++o) {
    const double g = dy[o];
    db[o] += g;
    double* dwr = dw.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) dwr[i] += g * x[i];
    if (!dx.empty()) {
      const float* row = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dx[i] += static_cast<double>(row[i]) * g;
    }
  }
}

void relu_inplace(std::span<double> x) {
  for (auto& v : x) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(std::span<const double> activation, std::span<double> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(activation[i] > 0.0)) dy[i] = 0.0;
}

double sigmoid(double z) {
  // Split by sign so exp never overflows; the result stays inside (0, 1)
  // even when exp saturates.
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  double p;
  if (z >= 0.0) {
    p = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    p = e / (1.0 + e);
  }
  return std::clamp(p, lo, hi);
}

}  // namespace polarcast::kernels
