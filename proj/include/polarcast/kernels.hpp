#pragma once

// Per-sample layer kernels on raw channel-major buffers. Activations and
// gradient accumulators are double; weights are stored as float.
//
// Each forward kernel has a `_reference` twin written as the literal nested
// sum. The reference versions are slow and only exist so tests and the
// benchmark can check the tuned loops against them.

#include <cstddef>
#include <cstdint>
#include <span>

namespace polarcast::kernels {

// out[oc][i] = b[oc] + sum_ic sum_k w[oc][ic][k] * x[ic][i+k]
// x: in_ch x len, w: out_ch x in_ch x k, out: out_ch x (len-k+1)
void conv1d_forward(std::span<const double> x, std::size_t in_ch, std::size_t len,
                    std::span<const float> w, std::span<const float> b, std::size_t out_ch,
                    std::size_t k, std::span<double> out);

void conv1d_forward_reference(std::span<const double> x, std::size_t in_ch, std::size_t len,
                              std::span<const float> w, std::span<const float> b,
                              std::size_t out_ch, std::size_t k, std::span<double> out);

// Accumulates dw/db; writes dx when non-empty (dx is overwritten, not accumulated).
void conv1d_backward(std::span<const double> x, std::size_t in_ch, std::size_t len,
                     std::span<const float> w, std::size_t out_ch, std::size_t k,
                     std::span<const double> dout, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

// Non-overlapping windows of 2; trailing odd element dropped; ties keep the
// lower index. argmax holds the absolute input index within each channel.
void maxpool2_forward(std::span<const double> x, std::size_t ch, std::size_t len,
                      std::span<double> out, std::span<std::uint32_t> argmax);

// dx is overwritten.
void maxpool2_backward(std::span<const double> dout, std::size_t ch, std::size_t len,
                       std::span<const std::uint32_t> argmax, std::span<double> dx);

// y = w x + b, w is out x in (row-major).
void dense_forward(std::span<const double> x, std::span<const float> w, std::span<const float> b,
                   std::span<double> y);

void dense_forward_reference(std::span<const double> x, std::span<const float> w,
                             std::span<const float> b, std::span<double> y);

// Accumulates dw/db; writes dx when non-empty.
void dense_backward(std::span<const double> x, std::span<const float> w,
                    std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                    std::span<double> db);

void relu_inplace(std::span<double> x);

// dx[i] = dy[i] where activation[i] > 0, else 0. In place on dy.
void relu_backward_inplace(std::span<const double> activation, std::span<double> dy);

double sigmoid(double z);

}  // namespace polarcast::kernels
