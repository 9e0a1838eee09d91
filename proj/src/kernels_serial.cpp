// Reference kernels: one output element at a time, straight from the
// definitions. Slow; used by the test suite and the benchmark baseline.

#include <cmath>

#include "rawnext/kernels.hpp"

namespace rawnext::kernels::serial {

template <typename T>
void conv1d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> bias,
                    std::span<T> y) {
  const std::size_t out_len = g.out_length();
  const std::size_t cin_g = g.in_per_group();
  const std::size_t cout_g = g.out_per_group();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const std::size_t group = o / cout_g;
      for (std::size_t t = 0; t < out_len; ++t) {
        T acc = bias.empty() ? T(0) : bias[o];
        for (std::size_t ic = 0; ic < cin_g; ++ic) {
          const std::size_t c = group * cin_g + ic;
          for (std::size_t k = 0; k < g.kernel; ++k) {
            const long pos = static_cast<long>(t * g.stride + k) - static_cast<long>(g.padding);
            if (pos < 0 || pos >= static_cast<long>(g.in_length)) continue;
            acc += w[(o * cin_g + ic) * g.kernel + k] * x[(n * g.in_channels + c) * g.in_length + pos];
          }
        }
        y[(n * g.out_channels + o) * out_len + t] = acc;
      }
    }
}

template <typename T>
void conv1d_backward_input(const ConvGeometry& g, std::span<const T> grad_y, std::span<const T> w,
                           std::span<T> grad_x) {
  const std::size_t out_len = g.out_length();
  const std::size_t cin_g = g.in_per_group();
  const std::size_t cout_g = g.out_per_group();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const std::size_t group = o / cout_g;
      for (std::size_t t = 0; t < out_len; ++t) {
        const T gy = grad_y[(n * g.out_channels + o) * out_len + t];
        for (std::size_t ic = 0; ic < cin_g; ++ic)
          for (std::size_t k = 0; k < g.kernel; ++k) {
            const long pos = static_cast<long>(t * g.stride + k) - static_cast<long>(g.padding);
            if (pos < 0 || pos >= static_cast<long>(g.in_length)) continue;
            grad_x[(n * g.in_channels + group * cin_g + ic) * g.in_length + pos] +=
                w[(o * cin_g + ic) * g.kernel + k] * gy;
          }
      }
    }
}

template <typename T>
void conv1d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> grad_y,
                            std::span<T> grad_w) {
  const std::size_t out_len = g.out_length();
  const std::size_t cin_g = g.in_per_group();
  const std::size_t cout_g = g.out_per_group();
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const std::size_t group = o / cout_g;
    for (std::size_t ic = 0; ic < cin_g; ++ic)
      for (std::size_t k = 0; k < g.kernel; ++k) {
        T acc = 0;
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t t = 0; t < out_len; ++t) {
            const long pos = static_cast<long>(t * g.stride + k) - static_cast<long>(g.padding);
            if (pos < 0 || pos >= static_cast<long>(g.in_length)) continue;
            acc += grad_y[(n * g.out_channels + o) * out_len + t] *
                   x[(n * g.in_channels + group * cin_g + ic) * g.in_length + pos];
          }
        grad_w[(o * cin_g + ic) * g.kernel + k] += acc;
      }
  }
}

template <typename T>
void avgpool1d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y) {
  const std::size_t out_len = g.out_length();
  for (std::size_t row = 0; row < g.batch * g.channels; ++row)
    for (std::size_t t = 0; t < out_len; ++t) {
      T acc = 0;
      for (std::size_t k = 0; k < g.kernel; ++k) acc += x[row * g.in_length + t * g.stride + k];
      y[row * out_len + t] = acc / static_cast<T>(g.kernel);
    }
}

template <typename T>
void avgpool1d_backward(const PoolGeometry& g, std::span<const T> grad_y, std::span<T> grad_x) {
  const std::size_t out_len = g.out_length();
  for (std::size_t row = 0; row < g.batch * g.channels; ++row)
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t k = 0; k < g.kernel; ++k)
        grad_x[row * g.in_length + t * g.stride + k] += grad_y[row * out_len + t] / static_cast<T>(g.kernel);
}

template <typename T>
void maxpool1d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax) {
  const std::size_t out_len = g.out_length();
  for (std::size_t row = 0; row < g.batch * g.channels; ++row)
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t best = row * g.in_length + t * g.stride;
      for (std::size_t k = 1; k < g.kernel; ++k) {
        const std::size_t idx = row * g.in_length + t * g.stride + k;
        if (x[idx] > x[best]) best = idx;
      }
      y[row * out_len + t] = x[best];
      argmax[row * out_len + t] = best;
    }
}

template <typename T>
void maxpool1d_backward(const PoolGeometry& g, std::span<const T> grad_y, std::span<const std::size_t> argmax,
                        std::span<T> grad_x) {
  const std::size_t total = g.batch * g.channels * g.out_length();
  for (std::size_t i = 0; i < total; ++i) grad_x[argmax[i]] += grad_y[i];
}

template <typename T>
void batchnorm_train_forward(const NormGeometry& g, std::span<const T> x, std::span<const T> gamma,
                             std::span<const T> beta, T eps, std::span<T> y, std::span<T> x_hat, std::span<T> mean,
                             std::span<T> var, std::span<T> inv_std) {
  const T count = static_cast<T>(g.batch * g.length);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T sum = 0;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t t = 0; t < g.length; ++t) sum += x[(n * g.channels + c) * g.length + t];
    const T mu = sum / count;
    T sq = 0;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t t = 0; t < g.length; ++t) {
        const T d = x[(n * g.channels + c) * g.length + t] - mu;
        sq += d * d;
      }
    mean[c] = mu;
    var[c] = sq / count;
    inv_std[c] = T(1) / std::sqrt(var[c] + eps);
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t t = 0; t < g.length; ++t) {
        const std::size_t i = (n * g.channels + c) * g.length + t;
        x_hat[i] = (x[i] - mu) * inv_std[c];
        y[i] = gamma[c] * x_hat[i] + beta[c];
      }
  }
}

template <typename T>
void batchnorm_train_backward(const NormGeometry& g, std::span<const T> grad_y, std::span<const T> x_hat,
                              std::span<const T> gamma, std::span<const T> inv_std, std::span<T> grad_x,
                              std::span<T> grad_gamma, std::span<T> grad_beta) {
  const T count = static_cast<T>(g.batch * g.length);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T sum_dy = 0;
    T sum_dy_xhat = 0;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t t = 0; t < g.length; ++t) {
        const std::size_t i = (n * g.channels + c) * g.length + t;
        sum_dy += grad_y[i];
        sum_dy_xhat += grad_y[i] * x_hat[i];
      }
    if (!grad_gamma.empty()) grad_gamma[c] += sum_dy_xhat;
    if (!grad_beta.empty()) grad_beta[c] += sum_dy;
    if (grad_x.empty()) continue;
    const T scale = gamma[c] * inv_std[c] / count;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t t = 0; t < g.length; ++t) {
        const std::size_t i = (n * g.channels + c) * g.length + t;
        grad_x[i] += scale * (count * grad_y[i] - sum_dy - x_hat[i] * sum_dy_xhat);
      }
  }
}

#include "kernels_instantiate.inc"

RAWNEXT_INSTANTIATE(float)
RAWNEXT_INSTANTIATE(double)

}  // namespace rawnext::kernels::serial
