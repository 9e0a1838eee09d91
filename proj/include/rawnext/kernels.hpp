#pragma once

// Raw compute kernels over contiguous (batch, channel, time) arrays.
//
// Every kernel exists twice: `serial::` is the direct nested-loop reference
// kept for testing, `parallel::` is the OpenMP version used by the ops.
// Parallel kernels partition outputs disjointly and fix the reduction order
// per output element, so results do not depend on the thread count.

#include <cstddef>
#include <span>
#include <vector>

namespace rawnext::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_length = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  std::size_t out_length() const { return (in_length + 2 * padding - kernel) / stride + 1; }
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
};

struct PoolGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t in_length = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;

  std::size_t out_length() const { return (in_length - kernel) / stride + 1; }
};

struct NormGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t length = 1;
};

// Weight layout for convolution: (out_channels, in_channels / groups, kernel).
// `bias` may be empty.
#define RAWNEXT_KERNEL_DECLS                                                                              \
  template <typename T>                                                                                   \
  void conv1d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,                  \
                      std::span<const T> bias, std::span<T> y);                                           \
  template <typename T>                                                                                   \
  void conv1d_backward_input(const ConvGeometry& g, std::span<const T> grad_y, std::span<const T> w,      \
                             std::span<T> grad_x);                                                        \
  template <typename T>                                                                                   \
  void conv1d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> grad_y,     \
                              std::span<T> grad_w);                                                       \
  template <typename T>                                                                                   \
  void avgpool1d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y);                    \
  template <typename T>                                                                                   \
  void avgpool1d_backward(const PoolGeometry& g, std::span<const T> grad_y, std::span<T> grad_x);         \
  template <typename T>                                                                                   \
  void maxpool1d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y,                     \
                         std::span<std::size_t> argmax);                                                  \
  template <typename T>                                                                                   \
  void maxpool1d_backward(const PoolGeometry& g, std::span<const T> grad_y,                               \
                          std::span<const std::size_t> argmax, std::span<T> grad_x);                      \
  template <typename T>                                                                                   \
  void batchnorm_train_forward(const NormGeometry& g, std::span<const T> x, std::span<const T> gamma,     \
                               std::span<const T> beta, T eps, std::span<T> y, std::span<T> x_hat,        \
                               std::span<T> mean, std::span<T> var, std::span<T> inv_std);                \
  template <typename T>                                                                                   \
  void batchnorm_train_backward(const NormGeometry& g, std::span<const T> grad_y, std::span<const T> x_hat, \
                                std::span<const T> gamma, std::span<const T> inv_std, std::span<T> grad_x,  \
                                std::span<T> grad_gamma, std::span<T> grad_beta);

// Accumulation contract: backward kernels ADD into their outputs; forward
// kernels overwrite. Max-pool ties resolve to the earliest index.
namespace serial {
RAWNEXT_KERNEL_DECLS
}  // namespace serial

namespace parallel {
RAWNEXT_KERNEL_DECLS
}  // namespace parallel

#undef RAWNEXT_KERNEL_DECLS

}  // namespace rawnext::kernels
