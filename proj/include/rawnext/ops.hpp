#pragma once

// Differentiable operators. Each records a backward closure when gradient
// recording is enabled and any input requires a gradient.
//
// Layout conventions:
//   feature maps   (batch, channels, time)
//   matrices       (rows, features)
//   conv weights   (out_channels, in_channels / groups, kernel)
//   convT weights  (in_channels, out_channels / groups, kernel)

#include <cstddef>
#include <vector>

#include "rawnext/tensor.hpp"

namespace rawnext::ops {

enum class NormMode { train, eval };

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding, std::size_t groups = 1);

/// Output length (T - 1) * stride + kernel.
template <typename T>
Tensor<T> conv1d_transposed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                            std::size_t groups = 1);

template <typename T>
Tensor<T> avg_pool1d(const Tensor<T>& x, std::size_t kernel, std::size_t stride);

template <typename T>
Tensor<T> max_pool1d(const Tensor<T>& x, std::size_t kernel, std::size_t stride);

/// Per-channel normalisation over batch x time. Train mode normalises with
/// batch statistics and updates the running buffers in place
/// (running = (1 - momentum) * running + momentum * batch, unbiased variance).
template <typename T>
Tensor<T> batch_norm1d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T> running_mean,
                       Tensor<T> running_var, NormMode mode, T eps = T(1e-5), T momentum = T(0.1));

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x);
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// Elementwise binary ops. `b` broadcasts: each of its dims equals a's or is 1.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x (rows, in) * W^T (in, out) + b.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Reductions keep the reduced axis with extent 1.
template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// Prepends `count` copies of the first frame along the time axis.
template <typename T>
Tensor<T> pad_left_edge(const Tensor<T>& x, std::size_t count);

/// Mean cross-entropy of (rows, classes) logits against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x);

/// Additive angular margin on a (rows, classes) cosine matrix: target entries
/// become scale * cos(theta + margin), the rest scale * cos(theta). Where
/// theta + margin would pass pi, the target falls back to
/// cos(theta) - margin * sin(margin) so the logit stays monotone in margin.
template <typename T>
Tensor<T> additive_angular_margin(const Tensor<T>& cosines, const std::vector<std::size_t>& labels, T margin,
                                  T scale);

}  // namespace rawnext::ops
