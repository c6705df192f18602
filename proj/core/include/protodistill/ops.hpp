#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "protodistill/tensor.hpp"

namespace protodistill::ops {

// 2-D cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin,k,k], optional
// bias [Cout] (pass an undefined Tensor to skip). Output spatial size is
// floor((H + 2*pad - k) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int pad);
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  return conv2d(input, kernel, Tensor{}, stride, pad);
}

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Binary ops accept identical shapes or a single-element operand on either side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// Square root with zero gradient at the origin.
Tensor sqrt(const Tensor& x);
// log((x + 1) / (x + eps)), elementwise; x must be non-negative.
Tensor log_similarity(const Tensor& x, double eps);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Flat L2 norm of every leading-axis slice: [N, ...] -> [N]. Zero norm
// back-propagates a zero gradient.
Tensor slice_norms(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// [N,C,H,W] -> [N,H,W,C]
Tensor to_channels_last(const Tensor& x);
// Rows `rows` of a [N, ...] tensor, stacked in the given order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// fmap [N,H,W,d] against prototypes [m,d] -> squared distances [N,m,H,W].
Tensor patch_sq_distances(const Tensor& fmap, const Tensor& prototypes);
// Euclidean counterpart of patch_sq_distances.
Tensor patch_distances(const Tensor& fmap, const Tensor& prototypes);
// Minimum over the two trailing axes: [N,m,H,W] -> [N,m]. The gradient is
// routed to the first minimizer in row-major (i, j) order.
Tensor min_spatial(const Tensor& x);
// Row-major flat index i*W + j of that minimizer, per (n, m).
std::vector<std::size_t> argmin_spatial(const Tensor& x);

// [N,K] x [K,M] -> [N,M]
Tensor matmul(const Tensor& a, const Tensor& b);
// Mean softmax cross-entropy of logits [N,C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
// Per-row minimum of x [N,K] over entries whose mask byte is non-zero.
// Rows with an empty mask yield 0 and pass no gradient.
Tensor masked_min(const Tensor& x, std::span<const std::uint8_t> mask);

}  // namespace protodistill::ops
