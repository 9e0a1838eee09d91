#include "rawnext/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rawnext/kernels.hpp"

namespace rawnext::ops {

namespace kp = kernels::parallel;

namespace {

template <typename T>
using Backward = std::function<void(TensorNode<T>&)>;

template <typename T>
Tensor<T> make_output(Shape shape, std::vector<T> value, std::vector<NodePtr<T>> inputs, const char* op,
                      Backward<T> fn) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
  if (needs) {
    node->requires_grad = true;
    std::erase(inputs, nullptr);
    node->parents = std::move(inputs);
    node->backward = std::move(fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
bool wants_grad(const NodePtr<T>& node) {
  return node && node->requires_grad;
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) { throw ShapeError(op + ": " + what); }

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* name) {
  if (!t.defined()) shape_fail(op, std::string(name) + " is undefined");
  if (t.rank() != rank)
    shape_fail(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

// View of a tensor as (outer, extent, inner) around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <typename T>
void check_axis(const Tensor<T>& x, std::size_t axis, const char* op) {
  if (axis >= x.rank())
    shape_fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
}

template <typename T>
Tensor<T> unary(const Tensor<T>& x, const char* op, auto&& f, auto&& df) {
  const auto& xv = x.node()->value;
  std::vector<T> y(xv.size());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  auto xn = x.node();
  return make_output<T>(x.shape(), std::move(y), {xn}, op, [xn, df](TensorNode<T>& out) {
    auto& gx = xn->grad_buffer();
    const auto& gy = out.grad;
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xn->value[i], out.value[i]);
  });
}

// Strides of b broadcast against a (0 on broadcast axes).
template <typename T>
std::vector<std::size_t> broadcast_strides(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rank() != b.rank())
    shape_fail(op, "rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<std::size_t> strides(a.rank(), 0);
  std::size_t stride = 1;
  for (std::size_t i = a.rank(); i-- > 0;) {
    if (b.dim(i) != a.dim(i) && b.dim(i) != 1)
      shape_fail(op, "dimension " + std::to_string(i) + " mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    strides[i] = b.dim(i) == 1 ? 0 : stride;
    stride *= b.dim(i);
  }
  return strides;
}

// Maps a flat index of `a` to the matching flat index of broadcast `b`.
struct BroadcastIndex {
  Shape shape;
  std::vector<std::size_t> b_strides;

  std::size_t operator()(std::size_t i) const {
    std::size_t result = 0;
    for (std::size_t d = shape.size(); d-- > 0;) {
      result += (i % shape[d]) * b_strides[d];
      i /= shape[d];
    }
    return result;
  }
};

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* op) {
  const BroadcastIndex index{a.shape(), broadcast_strides(a, b, op)};
  const bool same = a.shape() == b.shape();
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<T> y(av.size());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T bi = bv[same ? i : index(i)];
    y[i] = kind == BinaryKind::add ? av[i] + bi : kind == BinaryKind::sub ? av[i] - bi : av[i] * bi;
  }
  auto an = a.node();
  auto bn = b.node();
  return make_output<T>(a.shape(), std::move(y), {an, bn}, op, [an, bn, index, same, kind](TensorNode<T>& out) {
    const auto& gy = out.grad;
    if (wants_grad(an)) {
      auto& ga = an->grad_buffer();
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < gy.size(); ++i)
        ga[i] += kind == BinaryKind::mul ? gy[i] * bn->value[same ? i : index(i)] : gy[i];
    }
    if (wants_grad(bn)) {
      auto& gb = bn->grad_buffer();
      // Serial scatter: broadcast targets collide across i.
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const std::size_t j = same ? i : index(i);
        gb[j] += kind == BinaryKind::add ? gy[i] : kind == BinaryKind::sub ? -gy[i] : gy[i] * an->value[i];
      }
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding, std::size_t groups) {
  constexpr const char* op = "conv1d";
  require_rank(x, 3, op, "input");
  require_rank(weight, 3, op, "weight");
  if (stride == 0) shape_fail(op, "stride must be positive");
  if (groups == 0) shape_fail(op, "groups must be positive");
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.in_length = x.dim(2);
  g.out_channels = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = stride;
  g.padding = padding;
  g.groups = groups;
  if (g.in_channels % groups != 0)
    shape_fail(op, "input channels (" + std::to_string(g.in_channels) + ") not divisible by groups (" +
                       std::to_string(groups) + ")");
  if (g.out_channels % groups != 0)
    shape_fail(op, "output channels (" + std::to_string(g.out_channels) + ") not divisible by groups (" +
                       std::to_string(groups) + ")");
  if (weight.dim(1) != g.in_per_group())
    shape_fail(op, "weight dimension 1 is " + std::to_string(weight.dim(1)) + ", expected in_channels/groups = " +
                       std::to_string(g.in_per_group()));
  if (g.in_length + 2 * padding < g.kernel)
    shape_fail(op, "input length " + std::to_string(g.in_length) + " shorter than kernel " +
                       std::to_string(g.kernel));
  if (bias.defined() && bias.numel() != g.out_channels)
    shape_fail(op, "bias length " + std::to_string(bias.numel()) + " != output channels " +
                       std::to_string(g.out_channels));

  const std::size_t out_len = g.out_length();
  std::vector<T> y(g.batch * g.out_channels * out_len);
  std::span<const T> bspan = bias.defined() ? bias.values() : std::span<const T>{};
  kp::conv1d_forward<T>(g, x.values(), weight.values(), bspan, y);

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : NodePtr<T>{};
  return make_output<T>({g.batch, g.out_channels, out_len}, std::move(y), {xn, wn, bn}, op,
                        [g, xn, wn, bn, out_len](TensorNode<T>& out) {
                          if (wants_grad(xn)) kp::conv1d_backward_input<T>(g, out.grad, wn->value, xn->grad_buffer());
                          if (wants_grad(wn)) kp::conv1d_backward_weight<T>(g, xn->value, out.grad, wn->grad_buffer());
                          if (wants_grad(bn)) {
                            auto& gb = bn->grad_buffer();
                            for (std::size_t n = 0; n < g.batch; ++n)
                              for (std::size_t o = 0; o < g.out_channels; ++o) {
                                const T* row = out.grad.data() + (n * g.out_channels + o) * out_len;
                                T acc = 0;
                                for (std::size_t t = 0; t < out_len; ++t) acc += row[t];
                                gb[o] += acc;
                              }
                          }
                        });
}

template <typename T>
Tensor<T> conv1d_transposed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                            std::size_t groups) {
  constexpr const char* op = "conv1d_transposed";
  require_rank(x, 3, op, "input");
  require_rank(weight, 3, op, "weight");
  if (stride == 0) shape_fail(op, "stride must be positive");
  if (groups == 0) shape_fail(op, "groups must be positive");
  const std::size_t in_ch = x.dim(1);
  if (weight.dim(0) != in_ch)
    shape_fail(op, "weight dimension 0 is " + std::to_string(weight.dim(0)) + ", expected input channels " +
                       std::to_string(in_ch));
  if (in_ch % groups != 0)
    shape_fail(op, "input channels (" + std::to_string(in_ch) + ") not divisible by groups (" +
                       std::to_string(groups) + ")");
  // Adjoint geometry: the transposed op is the input-gradient of a conv that
  // maps the (longer) output back onto x.
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.out_channels = in_ch;
  g.in_channels = weight.dim(1) * groups;
  g.kernel = weight.dim(2);
  g.stride = stride;
  g.padding = 0;
  g.groups = groups;
  g.in_length = (x.dim(2) - 1) * stride + g.kernel;
  if (bias.defined() && bias.numel() != g.in_channels)
    shape_fail(op, "bias length " + std::to_string(bias.numel()) + " != output channels " +
                       std::to_string(g.in_channels));

  const std::size_t out_len = g.in_length;
  std::vector<T> y(g.batch * g.in_channels * out_len, T(0));
  kp::conv1d_backward_input<T>(g, x.values(), weight.values(), y);
  if (bias.defined()) {
    const auto bv = bias.values();
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        T* row = y.data() + (n * g.in_channels + c) * out_len;
        for (std::size_t t = 0; t < out_len; ++t) row[t] += bv[c];
      }
  }

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : NodePtr<T>{};
  return make_output<T>({g.batch, g.in_channels, out_len}, std::move(y), {xn, wn, bn}, op,
                        [g, xn, wn, bn, out_len](TensorNode<T>& out) {
                          if (wants_grad(xn)) {
                            std::vector<T> tmp(xn->value.size());
                            kp::conv1d_forward<T>(g, out.grad, wn->value, {}, tmp);
                            auto& gx = xn->grad_buffer();
                            for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                          }
                          if (wants_grad(wn)) kp::conv1d_backward_weight<T>(g, out.grad, xn->value, wn->grad_buffer());
                          if (wants_grad(bn)) {
                            auto& gb = bn->grad_buffer();
                            for (std::size_t n = 0; n < g.batch; ++n)
                              for (std::size_t c = 0; c < g.in_channels; ++c) {
                                const T* row = out.grad.data() + (n * g.in_channels + c) * out_len;
                                T acc = 0;
                                for (std::size_t t = 0; t < out_len; ++t) acc += row[t];
                                gb[c] += acc;
                              }
                          }
                        });
}

namespace {
template <typename T>
kernels::PoolGeometry pool_geometry(const Tensor<T>& x, std::size_t kernel, std::size_t stride, const char* op) {
  require_rank(x, 3, op, "input");
  if (kernel == 0 || stride == 0) shape_fail(op, "kernel and stride must be positive");
  if (x.dim(2) < kernel)
    shape_fail(op, "input shorter than pooling window (" + std::to_string(x.dim(2)) + " < " +
                       std::to_string(kernel) + ")");
  return {x.dim(0), x.dim(1), x.dim(2), kernel, stride};
}
}  // namespace

template <typename T>
Tensor<T> avg_pool1d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  const auto g = pool_geometry(x, kernel, stride, "avg_pool1d");
  std::vector<T> y(g.batch * g.channels * g.out_length());
  kp::avgpool1d_forward<T>(g, x.values(), y);
  auto xn = x.node();
  return make_output<T>({g.batch, g.channels, g.out_length()}, std::move(y), {xn}, "avg_pool1d",
                        [g, xn](TensorNode<T>& out) { kp::avgpool1d_backward<T>(g, out.grad, xn->grad_buffer()); });
}

template <typename T>
Tensor<T> max_pool1d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  const auto g = pool_geometry(x, kernel, stride, "max_pool1d");
  std::vector<T> y(g.batch * g.channels * g.out_length());
  std::vector<std::size_t> argmax(y.size());
  kp::maxpool1d_forward<T>(g, x.values(), y, argmax);
  auto xn = x.node();
  return make_output<T>({g.batch, g.channels, g.out_length()}, std::move(y), {xn}, "max_pool1d",
                        [g, xn, argmax = std::move(argmax)](TensorNode<T>& out) {
                          kp::maxpool1d_backward<T>(g, out.grad, argmax, xn->grad_buffer());
                        });
}

template <typename T>
Tensor<T> batch_norm1d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T> running_mean,
                       Tensor<T> running_var, NormMode mode, T eps, T momentum) {
  constexpr const char* op = "batch_norm1d";
  require_rank(x, 3, op, "input");
  kernels::NormGeometry g{x.dim(0), x.dim(1), x.dim(2)};
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var})
    if (!t->defined() || t->numel() != g.channels)
      shape_fail(op, "affine/statistics length must equal channel count " + std::to_string(g.channels));
  const std::size_t count = g.batch * g.length;
  if (count == 0) shape_fail(op, "zero batch x time extent");

  std::vector<T> y(x.numel());
  std::vector<T> x_hat(x.numel());
  std::vector<T> inv_std(g.channels);
  if (mode == NormMode::train) {
    std::vector<T> mean(g.channels), var(g.channels);
    kp::batchnorm_train_forward<T>(g, x.values(), gamma.values(), beta.values(), eps, y, x_hat, mean, var, inv_std);
    auto rm = running_mean.mutable_values();
    auto rv = running_var.mutable_values();
    const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
    for (std::size_t c = 0; c < g.channels; ++c) {
      rm[c] = (T(1) - momentum) * rm[c] + momentum * mean[c];
      rv[c] = (T(1) - momentum) * rv[c] + momentum * var[c] * unbias;
    }
  } else {
    const auto rm = running_mean.values();
    const auto rv = running_var.values();
    const auto gm = gamma.values();
    const auto bt = beta.values();
    const auto xv = x.values();
    for (std::size_t c = 0; c < g.channels; ++c) inv_std[c] = T(1) / std::sqrt(rv[c] + eps);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < g.channels; ++c) {
        const std::size_t off = (n * g.channels + c) * g.length;
        for (std::size_t t = 0; t < g.length; ++t) {
          x_hat[off + t] = (xv[off + t] - rm[c]) * inv_std[c];
          y[off + t] = gm[c] * x_hat[off + t] + bt[c];
        }
      }
  }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_output<T>(
      x.shape(), std::move(y), {xn, gn, bn}, op,
      [g, mode, xn, gn, bn, x_hat = std::move(x_hat), inv_std = std::move(inv_std)](TensorNode<T>& out) {
        std::span<T> gx = wants_grad(xn) ? std::span<T>(xn->grad_buffer()) : std::span<T>{};
        std::span<T> gg = wants_grad(gn) ? std::span<T>(gn->grad_buffer()) : std::span<T>{};
        std::span<T> gb = wants_grad(bn) ? std::span<T>(bn->grad_buffer()) : std::span<T>{};
        if (mode == NormMode::train) {
          kp::batchnorm_train_backward<T>(g, out.grad, x_hat, gn->value, inv_std, gx, gg, gb);
          return;
        }
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t c = 0; c < g.channels; ++c) {
            const std::size_t off = (n * g.channels + c) * g.length;
            const T scale = gn->value[c] * inv_std[c];
            for (std::size_t t = 0; t < g.length; ++t) {
              const T gy = out.grad[off + t];
              if (!gx.empty()) gx[off + t] += gy * scale;
              if (!gg.empty()) gg[c] += gy * x_hat[off + t];
              if (!gb.empty()) gb[c] += gy;
            }
          }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.values())
    if (v < T(0)) throw NumericError("sqrt of negative value " + std::to_string(v));
  return unary(
      x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor) {
  return unary(
      x, "clamp_min", [floor](T v) { return v < floor ? floor : v; },
      [floor](T v, T) { return v < floor ? T(0) : T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::add, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::sub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::mul, "mul");
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  constexpr const char* op = "linear";
  require_rank(x, 2, op, "input");
  require_rank(weight, 2, op, "weight");
  const std::size_t rows = x.dim(0);
  const std::size_t in = x.dim(1);
  const std::size_t out_f = weight.dim(0);
  if (weight.dim(1) != in)
    shape_fail(op, "weight dimension 1 is " + std::to_string(weight.dim(1)) + ", expected " + std::to_string(in));
  if (bias.defined() && bias.numel() != out_f)
    shape_fail(op, "bias length " + std::to_string(bias.numel()) + " != " + std::to_string(out_f));

  const auto xv = x.values();
  const auto wv = weight.values();
  std::vector<T> y(rows * out_f);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out_f; ++o) {
      T acc = bias.defined() ? bias.values()[o] : T(0);
      for (std::size_t i = 0; i < in; ++i) acc += xv[r * in + i] * wv[o * in + i];
      y[r * out_f + o] = acc;
    }

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : NodePtr<T>{};
  return make_output<T>({rows, out_f}, std::move(y), {xn, wn, bn}, op,
                        [rows, in, out_f, xn, wn, bn](TensorNode<T>& out) {
                          const auto& gy = out.grad;
                          if (wants_grad(xn)) {
                            auto& gx = xn->grad_buffer();
#pragma omp parallel for schedule(static)
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t o = 0; o < out_f; ++o) {
                                const T g = gy[r * out_f + o];
                                for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += g * wn->value[o * in + i];
                              }
                          }
                          if (wants_grad(wn)) {
                            auto& gw = wn->grad_buffer();
#pragma omp parallel for schedule(static)
                            for (std::size_t o = 0; o < out_f; ++o)
                              for (std::size_t r = 0; r < rows; ++r) {
                                const T g = gy[r * out_f + o];
                                for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += g * xn->value[r * in + i];
                              }
                          }
                          if (wants_grad(bn)) {
                            auto& gb = bn->grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t o = 0; o < out_f; ++o) gb[o] += gy[r * out_f + o];
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  check_axis(x, axis, "softmax");
  const AxisView v = axis_view(x.shape(), axis);
  const auto xv = x.values();
  std::vector<T> y(xv.size());
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      T peak = xv[base];
      for (std::size_t e = 1; e < v.extent; ++e) peak = std::max(peak, xv[base + e * v.inner]);
      T total = 0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        y[base + e * v.inner] = std::exp(xv[base + e * v.inner] - peak);
        total += y[base + e * v.inner];
      }
      for (std::size_t e = 0; e < v.extent; ++e) y[base + e * v.inner] /= total;
    }
  auto xn = x.node();
  return make_output<T>(x.shape(), std::move(y), {xn}, "softmax", [v, xn](TensorNode<T>& out) {
    auto& gx = xn->grad_buffer();
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        T dot = 0;
        for (std::size_t e = 0; e < v.extent; ++e) dot += out.grad[base + e * v.inner] * out.value[base + e * v.inner];
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t j = base + e * v.inner;
          gx[j] += out.value[j] * (out.grad[j] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  constexpr const char* op = "concat";
  if (parts.empty()) shape_fail(op, "no inputs");
  const Tensor<T>& first = parts.front();
  check_axis(first, axis, op);
  Shape shape = first.shape();
  std::size_t total = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& s = parts[p].shape();
    if (s.size() != shape.size()) shape_fail(op, "rank mismatch at input " + std::to_string(p));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != shape[d])
        shape_fail(op, "input " + std::to_string(p) + " dimension " + std::to_string(d) + " is " +
                           std::to_string(s[d]) + ", expected " + std::to_string(shape[d]));
    total += s[axis];
  }
  shape[axis] = total;
  const AxisView out_v = axis_view(shape, axis);
  std::vector<T> y(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& part : parts) {
    offsets.push_back(offset);
    const AxisView pv = axis_view(part.shape(), axis);
    const auto src = part.values();
    for (std::size_t o = 0; o < pv.outer; ++o)
      std::copy_n(src.data() + o * pv.extent * pv.inner, pv.extent * pv.inner,
                  y.data() + (o * out_v.extent + offset) * out_v.inner);
    offset += pv.extent;
  }
  std::vector<NodePtr<T>> nodes;
  for (const auto& part : parts) nodes.push_back(part.node());
  return make_output<T>(shape, std::move(y), nodes, op, [nodes, offsets, out_v, axis](TensorNode<T>& out) {
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      if (!wants_grad(nodes[p])) continue;
      const AxisView pv = axis_view(nodes[p]->shape, axis);
      auto& gp = nodes[p]->grad_buffer();
      for (std::size_t o = 0; o < pv.outer; ++o) {
        const T* src = out.grad.data() + (o * out_v.extent + offsets[p]) * out_v.inner;
        T* dst = gp.data() + o * pv.extent * pv.inner;
        for (std::size_t i = 0; i < pv.extent * pv.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
  check_axis(x, axis, "sum");
  const AxisView v = axis_view(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = 1;
  const auto xv = x.values();
  std::vector<T> y(v.outer * v.inner, T(0));
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      T acc = 0;
      for (std::size_t e = 0; e < v.extent; ++e) acc += xv[(o * v.extent + e) * v.inner + i];
      y[o * v.inner + i] = acc;
    }
  auto xn = x.node();
  return make_output<T>(shape, std::move(y), {xn}, "sum", [v, xn](TensorNode<T>& out) {
    auto& gx = xn->grad_buffer();
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t e = 0; e < v.extent; ++e)
        for (std::size_t i = 0; i < v.inner; ++i) gx[(o * v.extent + e) * v.inner + i] += out.grad[o * v.inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  check_axis(x, axis, "mean");
  return scale(sum(x, axis), T(1) / static_cast<T>(x.dim(axis)));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  auto xn = x.node();
  return make_output<T>({1}, {acc}, {xn}, "sum_all", [xn](TensorNode<T>& out) {
    auto& gx = xn->grad_buffer();
    for (auto& g : gx) g += out.grad[0];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto xn = x.node();
  std::vector<T> y(x.values().begin(), x.values().end());
  return make_output<T>(std::move(shape), std::move(y), {xn}, "reshape", [xn](TensorNode<T>& out) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i];
  });
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis(x, axis, "narrow");
  if (length == 0 || start + length > x.dim(axis))
    shape_fail("narrow", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") outside dimension " + std::to_string(axis) + " of " + shape_str(x.shape()));
  const AxisView v = axis_view(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<T> y(v.outer * length * v.inner);
  const auto xv = x.values();
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(xv.data() + (o * v.extent + start) * v.inner, length * v.inner, y.data() + o * length * v.inner);
  auto xn = x.node();
  return make_output<T>(shape, std::move(y), {xn}, "narrow", [v, start, length, xn](TensorNode<T>& out) {
    auto& gx = xn->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      const T* src = out.grad.data() + o * length * v.inner;
      T* dst = gx.data() + (o * v.extent + start) * v.inner;
      for (std::size_t i = 0; i < length * v.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> pad_left_edge(const Tensor<T>& x, std::size_t count) {
  require_rank(x, 3, "pad_left_edge", "input");
  if (count == 0) return x;
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t len = x.dim(2);
  const std::size_t out_len = len + count;
  std::vector<T> y(rows * out_len);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill_n(y.data() + r * out_len, count, xv[r * len]);
    std::copy_n(xv.data() + r * len, len, y.data() + r * out_len + count);
  }
  auto xn = x.node();
  return make_output<T>({x.dim(0), x.dim(1), out_len}, std::move(y), {xn}, "pad_left_edge",
                        [rows, len, out_len, count, xn](TensorNode<T>& out) {
                          auto& gx = xn->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* src = out.grad.data() + r * out_len;
                            for (std::size_t j = 0; j < count; ++j) gx[r * len] += src[j];
                            for (std::size_t t = 0; t < len; ++t) gx[r * len + t] += src[count + t];
                          }
                        });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  constexpr const char* op = "softmax_cross_entropy";
  require_rank(logits, 2, op, "logits");
  const std::size_t rows = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != rows)
    shape_fail(op, std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  for (std::size_t label : labels)
    if (label >= classes)
      shape_fail(op, "label " + std::to_string(label) + " out of range for " + std::to_string(classes) + " classes");

  const auto lv = logits.values();
  std::vector<T> probs(lv.size());
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = lv.data() + r * classes;
    const T peak = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[r * classes + k] = std::exp(row[k] - peak);
      total += probs[r * classes + k];
    }
    for (std::size_t k = 0; k < classes; ++k) probs[r * classes + k] /= total;
    loss += peak + std::log(total) - row[labels[r]];
  }
  loss /= static_cast<T>(rows);
  auto ln = logits.node();
  return make_output<T>({1}, {loss}, {ln}, op,
                        [ln, labels, rows, classes, probs = std::move(probs)](TensorNode<T>& out) {
                          auto& gl = ln->grad_buffer();
                          const T g = out.grad[0] / static_cast<T>(rows);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t k = 0; k < classes; ++k)
                              gl[r * classes + k] +=
                                  g * (probs[r * classes + k] - (k == labels[r] ? T(1) : T(0)));
                        });
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  require_rank(x, 2, "l2_normalize_rows", "input");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = 0;
    for (std::size_t c = 0; c < cols; ++c) sq += xv[r * cols + c] * xv[r * cols + c];
    norms[r] = std::max(std::sqrt(sq), T(1e-12));
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = xv[r * cols + c] / norms[r];
  }
  auto xn = x.node();
  return make_output<T>(x.shape(), std::move(y), {xn}, "l2_normalize_rows",
                        [xn, rows, cols, norms = std::move(norms)](TensorNode<T>& out) {
                          auto& gx = xn->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            T dot = 0;
                            for (std::size_t c = 0; c < cols; ++c)
                              dot += out.grad[r * cols + c] * out.value[r * cols + c];
                            for (std::size_t c = 0; c < cols; ++c)
                              gx[r * cols + c] += (out.grad[r * cols + c] - out.value[r * cols + c] * dot) / norms[r];
                          }
                        });
}

template <typename T>
Tensor<T> additive_angular_margin(const Tensor<T>& cosines, const std::vector<std::size_t>& labels, T margin,
                                  T scale) {
  constexpr const char* op = "additive_angular_margin";
  require_rank(cosines, 2, op, "cosines");
  if (!(margin >= T(0) && margin < std::numbers::pi_v<T> / 2))
    throw std::invalid_argument(std::string(op) + ": margin must lie in [0, pi/2), got " + std::to_string(margin));
  const std::size_t rows = cosines.dim(0);
  const std::size_t classes = cosines.dim(1);
  if (labels.size() != rows)
    shape_fail(op, std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  for (std::size_t label : labels)
    if (label >= classes)
      shape_fail(op, "label " + std::to_string(label) + " out of range for " + std::to_string(classes) + " classes");

  const T cos_m = std::cos(margin);
  const T sin_m = std::sin(margin);
  const auto cv = cosines.values();
  std::vector<T> y(cv.size());
  std::vector<T> slope(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < classes; ++k) {
      const T c = cv[r * classes + k];
      if (k != labels[r]) {
        y[r * classes + k] = scale * c;
        continue;
      }
      const T cc = std::clamp(c, T(-1) + T(1e-7), T(1) - T(1e-7));
      const T theta = std::acos(cc);
      if (theta + margin <= std::numbers::pi_v<T>) {
        const T s = std::sqrt(T(1) - cc * cc);
        y[r * classes + k] = scale * (cc * cos_m - s * sin_m);
        slope[r] = cc == c ? cos_m + sin_m * cc / s : T(0);
      } else {
        y[r * classes + k] = scale * (c - margin * sin_m);
        slope[r] = T(1);
      }
    }
  auto cn = cosines.node();
  return make_output<T>(cosines.shape(), std::move(y), {cn}, op,
                        [cn, labels, rows, classes, scale, slope = std::move(slope)](TensorNode<T>& out) {
                          auto& gc = cn->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t k = 0; k < classes; ++k)
                              gc[r * classes + k] +=
                                  out.grad[r * classes + k] * scale * (k == labels[r] ? slope[r] : T(1));
                        });
}

#define RAWNEXT_OPS_INSTANTIATE(T)                                                                                \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t,       \
                            std::size_t);                                                                         \
  template Tensor<T> conv1d_transposed(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,         \
                                       std::size_t);                                                              \
  template Tensor<T> avg_pool1d(const Tensor<T>&, std::size_t, std::size_t);                                      \
  template Tensor<T> max_pool1d(const Tensor<T>&, std::size_t, std::size_t);                                      \
  template Tensor<T> batch_norm1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>, Tensor<T>,     \
                                  NormMode, T, T);                                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                                      \
  template Tensor<T> tanh(const Tensor<T>&);                                                                      \
  template Tensor<T> sqrt(const Tensor<T>&);                                                                      \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                          \
  template Tensor<T> sum(const Tensor<T>&, std::size_t);                                                          \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                                         \
  template Tensor<T> sum_all(const Tensor<T>&);                                                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                            \
  template Tensor<T> narrow(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                             \
  template Tensor<T> pad_left_edge(const Tensor<T>&, std::size_t);                                                \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);                    \
  template Tensor<T> l2_normalize_rows(const Tensor<T>&);                                                         \
  template Tensor<T> additive_angular_margin(const Tensor<T>&, const std::vector<std::size_t>&, T, T);

RAWNEXT_OPS_INSTANTIATE(float)
RAWNEXT_OPS_INSTANTIATE(double)

}  // namespace rawnext::ops
