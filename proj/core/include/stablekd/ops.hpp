#pragma once

#include <cstddef>

#include "stablekd/autodiff.hpp"

namespace skd {

// Differentiable tensor operations. Each records its forward value on the
// operands' tape together with its backward rule. All reductions use a
// fixed loop order, so results are bit-reproducible.

/// [m×p]·[p×q] → [m×q]; dA = G·Bᵀ, dB = Aᵀ·G.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

/// Elementwise sum of equal shapes.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// x[N×d] + b[d] broadcast over rows.
template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> bias);

/// x[N×C×H×W] + b[C] broadcast over batch and space.
template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias);

/// x·W + b for x[N×d_in], W[d_in×d_out], b[d_out].
template <typename T>
Var<T> affine(Var<T> x, Var<T> weight, Var<T> bias);

/// Cross-correlation of input[N×C×H×W] with kernel[F×C×kh×kw].
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::size_t stride, std::size_t padding);

/// max(0, x); the gradient at exactly 0 is 0.
template <typename T>
Var<T> relu(Var<T> x);

/// Non-overlapping window means over the two trailing axes.
template <typename T>
Var<T> avgpool2d(Var<T> x, std::size_t window);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

/// [N×...] → [N×rest].
template <typename T>
Var<T> flatten(Var<T> x);

/// Sum of all elements, as a [1] tensor.
template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> scale(Var<T> x, T factor);

/// Elementwise product of equal shapes.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

/// Output extent of a strided, padded window; throws ConfigError when the
/// window does not tile the padded input exactly.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

}  // namespace skd
