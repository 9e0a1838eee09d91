// OpenMP kernels. Work is split over independent output rows; within a row
// the accumulation order is fixed, so any thread count gives the same bits.

#include <algorithm>
#include <cmath>
#include <vector>

#include "rawnext/kernels.hpp"

namespace rawnext::kernels::parallel {

namespace {

// Output positions t in [lo, hi) read input position t*stride + k - padding
// inside [0, in_length).
struct ValidRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

ValidRange valid_range(const ConvGeometry& g, std::size_t k) {
  const std::size_t out_len = g.out_length();
  ValidRange r;
  r.lo = k >= g.padding ? 0 : (g.padding - k + g.stride - 1) / g.stride;
  if (g.in_length + g.padding <= k) return {0, 0};
  r.hi = std::min(out_len, (g.in_length - 1 + g.padding - k) / g.stride + 1);
  if (r.lo > r.hi) r.lo = r.hi;
  return r;
}

constexpr std::size_t kBlock = 4;

// ---- Register-tiled stride-1 convolution ------------------------------------
//
// Accumulators for kBlock output channels x kTile vectors of time stay in
// registers across the whole (input channel, tap) reduction.

template <typename T>
struct Simd {
  static constexpr std::size_t width = 32 / sizeof(T);
  typedef T type __attribute__((vector_size(32)));
};

template <typename T>
inline typename Simd<T>::type load(const T* p) {
  typename Simd<T>::type v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}

constexpr std::size_t kTile = 2;

// y rows (+)= sum_ic sum_k w[ic][k][j] * xp[ic][t + k]; xp rows are zero padded
// and readable through the last tile.
template <typename T>
void conv_rows_tiled(const T* xp, std::size_t xstride, std::size_t cin, std::size_t kernel, const T* wpack,
                     std::size_t out_len, T* const* yrows, std::size_t width, const T* bias, bool accumulate) {
  using V = typename Simd<T>::type;
  constexpr std::size_t W = Simd<T>::width;
  constexpr std::size_t span = W * kTile;
  for (std::size_t t0 = 0; t0 < out_len; t0 += span) {
    V acc[kBlock][kTile];
    for (std::size_t j = 0; j < kBlock; ++j)
      for (std::size_t u = 0; u < kTile; ++u) acc[j][u] = V{} ;
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const T* xr = xp + ic * xstride + t0;
      const T* wr = wpack + ic * kernel * kBlock;
      for (std::size_t k = 0; k < kernel; ++k) {
        const V x0 = load(xr + k);
        const V x1 = load(xr + k + W);
        const T* wk = wr + k * kBlock;
#pragma GCC unroll 4
        for (std::size_t j = 0; j < kBlock; ++j) {
          acc[j][0] += wk[j] * x0;
          acc[j][1] += wk[j] * x1;
        }
      }
    }
    const std::size_t valid = std::min(span, out_len - t0);
    for (std::size_t j = 0; j < width; ++j) {
      T tmp[span];
      __builtin_memcpy(tmp, acc[j], sizeof tmp);
      T* yr = yrows[j] + t0;
      const T base = bias ? bias[j] : T(0);
      if (accumulate)
        for (std::size_t t = 0; t < valid; ++t) yr[t] += tmp[t];
      else
        for (std::size_t t = 0; t < valid; ++t) yr[t] = base + tmp[t];
    }
  }
}

// Stride-1 grouped convolution over the whole batch. `w` is (out, in/groups, k).
template <typename T>
void conv_stride1(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y, bool accumulate) {
  constexpr std::size_t span = Simd<T>::width * kTile;
  const std::size_t out_len = g.out_length();
  const std::size_t cin_g = g.in_per_group();
  const std::size_t cout_g = g.out_per_group();
  const std::size_t blocks = (cout_g + kBlock - 1) / kBlock;
  const std::size_t padded_out = (out_len + span - 1) / span * span;
  const std::size_t xstride = padded_out + g.kernel - 1 + Simd<T>::width;

  // wpack[group][block][ic][k][j], zero for missing output channels.
  std::vector<T> wpack(g.groups * blocks * cin_g * g.kernel * kBlock, T(0));
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const std::size_t grp = o / cout_g, local = o % cout_g, b = local / kBlock, j = local % kBlock;
    for (std::size_t ic = 0; ic < cin_g; ++ic)
      for (std::size_t k = 0; k < g.kernel; ++k)
        wpack[(((grp * blocks + b) * cin_g + ic) * g.kernel + k) * kBlock + j] = w[(o * cin_g + ic) * g.kernel + k];
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      std::vector<T> xp(cin_g * xstride, T(0));
      for (std::size_t ic = 0; ic < cin_g; ++ic) {
        const T* src = x + (n * g.in_channels + grp * cin_g + ic) * g.in_length;
        std::copy(src, src + g.in_length, xp.begin() + static_cast<std::ptrdiff_t>(ic * xstride + g.padding));
      }
      for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t o0 = grp * cout_g + b * kBlock;
        const std::size_t width = std::min(kBlock, cout_g - b * kBlock);
        T* rows[kBlock];
        for (std::size_t j = 0; j < width; ++j) rows[j] = y + (n * g.out_channels + o0 + j) * out_len;
        conv_rows_tiled(xp.data(), xstride, cin_g, g.kernel, wpack.data() + (grp * blocks + b) * cin_g * g.kernel * kBlock,
                        out_len, rows, width, bias ? bias + o0 : nullptr, accumulate);
      }
    }
}

template <typename T>
inline T hsum(typename Simd<T>::type v) {
  T lanes[Simd<T>::width];
  __builtin_memcpy(lanes, &v, sizeof lanes);
  T s = 0;
  for (T l : lanes) s += l;
  return s;
}

// grad_w[o][ic][k] += sum_n sum_t gy[o][t] * x[ic][t + k - padding], kernel <= 3.
template <typename T, std::size_t K>
void conv_weight_grad_stride1(const ConvGeometry& g, const T* x, const T* gy, T* gw) {
  using V = typename Simd<T>::type;
  constexpr std::size_t W = Simd<T>::width;
  const std::size_t out_len = g.out_length();
  const std::size_t cin_g = g.in_per_group();
  const std::size_t cout_g = g.out_per_group();
  const std::size_t blocks = (cout_g + kBlock - 1) / kBlock;
  const long pad = static_cast<long>(g.padding);
  // Time range where every tap reads inside the input row.
  const std::size_t lo = g.padding;
  const long hi_l = static_cast<long>(g.in_length) + pad - static_cast<long>(K) + 1;
  const std::size_t hi = std::max<long>(static_cast<long>(lo), std::min<long>(hi_l, static_cast<long>(out_len)));
  const std::vector<T> zeros(out_len, T(0));

#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t grp = 0; grp < g.groups; ++grp)
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t o0 = grp * cout_g + b * kBlock;
      const std::size_t width = std::min(kBlock, cout_g - b * kBlock);
      for (std::size_t ic = 0; ic < cin_g; ++ic) {
        V acc[kBlock][K];
        T edge[kBlock][K] = {};
        for (std::size_t j = 0; j < kBlock; ++j)
          for (std::size_t k = 0; k < K; ++k) acc[j][k] = V{};
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* gr[kBlock];
          for (std::size_t j = 0; j < kBlock; ++j)
            gr[j] = j < width ? gy + (n * g.out_channels + o0 + j) * out_len : zeros.data();
          const T* xr = x + (n * g.in_channels + grp * cin_g + ic) * g.in_length;
          std::size_t t = lo;
          for (; t + W <= hi; t += W) {
            V xv[K];
            for (std::size_t k = 0; k < K; ++k) xv[k] = load(xr + (static_cast<long>(t + k) - pad));
#pragma GCC unroll 4
            for (std::size_t j = 0; j < kBlock; ++j) {
              const V gv = load(gr[j] + t);
              for (std::size_t k = 0; k < K; ++k) acc[j][k] += gv * xv[k];
            }
          }
          // Edges: leading frames, vector remainder, trailing frames.
          auto scalar = [&](std::size_t t_lo, std::size_t t_hi) {
            for (std::size_t s = t_lo; s < t_hi; ++s)
              for (std::size_t k = 0; k < K; ++k) {
                const long src = static_cast<long>(s + k) - pad;
                if (src < 0 || src >= static_cast<long>(g.in_length)) continue;
                for (std::size_t j = 0; j < width; ++j) edge[j][k] += gr[j][s] * xr[src];
              }
          };
          scalar(0, std::min(lo, out_len));
          scalar(std::min(t, out_len), out_len);
        }
        for (std::size_t j = 0; j < width; ++j)
          for (std::size_t k = 0; k < K; ++k) gw[((o0 + j) * cin_g + ic) * K + k] += hsum<T>(acc[j][k]) + edge[j][k];
      }
    }
}

}  // namespace

template <typename T>
void conv1d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> bias,
                    std::span<T> y) {
  if (g.stride == 1) {
    conv_stride1(g, x.data(), w.data(), bias.empty() ? nullptr : bias.data(), y.data(), false);
    return;
  }
  const std::size_t out_len = g.out_length();
  const std::size_t cin_g = g.in_per_group();
  const std::size_t cout_g = g.out_per_group();
  const std::size_t blocks_per_group = (cout_g + kBlock - 1) / kBlock;
  const std::size_t n_blocks = g.groups * blocks_per_group;
  std::vector<ValidRange> ranges(g.kernel);
  for (std::size_t k = 0; k < g.kernel; ++k) ranges[k] = valid_range(g, k);

#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t b = 0; b < n_blocks; ++b) {
      const std::size_t group = b / blocks_per_group;
      const std::size_t o0 = group * cout_g + (b % blocks_per_group) * kBlock;
      const std::size_t o_end = std::min(o0 + kBlock, (group + 1) * cout_g);
      const std::size_t width = o_end - o0;
      T* rows[kBlock];
      for (std::size_t j = 0; j < width; ++j) {
        rows[j] = y.data() + (n * g.out_channels + o0 + j) * out_len;
        std::fill(rows[j], rows[j] + out_len, bias.empty() ? T(0) : bias[o0 + j]);
      }
      for (std::size_t ic = 0; ic < cin_g; ++ic) {
        const T* xr = x.data() + (n * g.in_channels + group * cin_g + ic) * g.in_length;
        for (std::size_t k = 0; k < g.kernel; ++k) {
          const auto [lo, hi] = ranges[k];
          const long shift = static_cast<long>(k) - static_cast<long>(g.padding);
          if (width == kBlock && g.stride == 1) {
            const T w0 = w[((o0 + 0) * cin_g + ic) * g.kernel + k];
            const T w1 = w[((o0 + 1) * cin_g + ic) * g.kernel + k];
            const T w2 = w[((o0 + 2) * cin_g + ic) * g.kernel + k];
            const T w3 = w[((o0 + 3) * cin_g + ic) * g.kernel + k];
            T* __restrict y0 = rows[0] + lo;
            T* __restrict y1 = rows[1] + lo;
            T* __restrict y2 = rows[2] + lo;
            T* __restrict y3 = rows[3] + lo;
            const T* __restrict xs = xr + (static_cast<long>(lo) + shift);
            const std::size_t len = hi - lo;
#pragma omp simd
            for (std::size_t t = 0; t < len; ++t) {
              const T v = xs[t];
              y0[t] += w0 * v;
              y1[t] += w1 * v;
              y2[t] += w2 * v;
              y3[t] += w3 * v;
            }
          } else {
            for (std::size_t j = 0; j < width; ++j) {
              const T wv = w[((o0 + j) * cin_g + ic) * g.kernel + k];
              T* __restrict yr = rows[j];
              if (g.stride == 1) {
                const T* __restrict xs = xr + (static_cast<long>(lo) + shift);
                T* __restrict yo = yr + lo;
                const std::size_t len = hi - lo;
#pragma omp simd
                for (std::size_t t = 0; t < len; ++t) yo[t] += wv * xs[t];
              } else {
                for (std::size_t t = lo; t < hi; ++t) yr[t] += wv * xr[static_cast<long>(t * g.stride) + shift];
              }
            }
          }
        }
      }
    }
}

template <typename T>
void conv1d_backward_input(const ConvGeometry& g, std::span<const T> grad_y, std::span<const T> w,
                           std::span<T> grad_x) {
  if (g.stride == 1 && g.padding < g.kernel) {
    // Full correlation of grad_y with flipped, channel-transposed weights.
    const std::size_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
    std::vector<T> flipped(g.in_channels * cout_g * g.kernel);
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t ic = 0; ic < cin_g; ++ic)
        for (std::size_t k = 0; k < g.kernel; ++k) {
          const std::size_t grp = o / cout_g;
          flipped[((grp * cin_g + ic) * cout_g + o % cout_g) * g.kernel + (g.kernel - 1 - k)] =
              w[(o * cin_g + ic) * g.kernel + k];
        }
    ConvGeometry adj = g;
    adj.in_channels = g.out_channels;
    adj.out_channels = g.in_channels;
    adj.in_length = g.out_length();
    adj.padding = g.kernel - 1 - g.padding;
    conv_stride1(adj, grad_y.data(), flipped.data(), static_cast<const T*>(nullptr), grad_x.data(), true);
    return;
  }
  const std::size_t out_len = g.out_length();
  const std::size_t cin_g = g.in_per_group();
  const std::size_t cout_g = g.out_per_group();
  if (g.padding == 0 && g.kernel == g.stride) {
    // Non-overlapping taps (the upsampling case): sum each phase contiguously,
    // then interleave once.
    const std::size_t K = g.kernel;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        const std::size_t group = c / cin_g;
        const std::size_t ic = c % cin_g;
        std::vector<T> phase(K * out_len, T(0));
        for (std::size_t o = group * cout_g; o < (group + 1) * cout_g; ++o) {
          const T* __restrict gy = grad_y.data() + (n * g.out_channels + o) * out_len;
          for (std::size_t k = 0; k < K; ++k) {
            const T wv = w[(o * cin_g + ic) * K + k];
            T* __restrict dst = phase.data() + k * out_len;
#pragma omp simd
            for (std::size_t t = 0; t < out_len; ++t) dst[t] += wv * gy[t];
          }
        }
        T* gx = grad_x.data() + (n * g.in_channels + c) * g.in_length;
        for (std::size_t t = 0; t < out_len; ++t)
          for (std::size_t k = 0; k < K; ++k) gx[t * K + k] += phase[k * out_len + t];
      }
    return;
  }
  std::vector<ValidRange> ranges(g.kernel);
  for (std::size_t k = 0; k < g.kernel; ++k) ranges[k] = valid_range(g, k);

#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const std::size_t group = c / cin_g;
      const std::size_t ic = c % cin_g;
      T* gx = grad_x.data() + (n * g.in_channels + c) * g.in_length;
      for (std::size_t o = group * cout_g; o < (group + 1) * cout_g; ++o) {
        const T* gy = grad_y.data() + (n * g.out_channels + o) * out_len;
        for (std::size_t k = 0; k < g.kernel; ++k) {
          const auto [lo, hi] = ranges[k];
          const long shift = static_cast<long>(k) - static_cast<long>(g.padding);
          const T wv = w[(o * cin_g + ic) * g.kernel + k];
          if (g.stride == 1) {
            T* __restrict dst = gx + (static_cast<long>(lo) + shift);
            const T* __restrict src = gy + lo;
            const std::size_t len = hi - lo;
#pragma omp simd
            for (std::size_t t = 0; t < len; ++t) dst[t] += wv * src[t];
          } else {
            for (std::size_t t = lo; t < hi; ++t) gx[static_cast<long>(t * g.stride) + shift] += wv * gy[t];
          }
        }
      }
    }
}

template <typename T>
void conv1d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> grad_y,
                            std::span<T> grad_w) {
  if (g.stride == 1 && g.kernel == 3) return conv_weight_grad_stride1<T, 3>(g, x.data(), grad_y.data(), grad_w.data());
  if (g.stride == 1 && g.kernel == 1) return conv_weight_grad_stride1<T, 1>(g, x.data(), grad_y.data(), grad_w.data());
  const std::size_t out_len = g.out_length();
  const std::size_t cin_g = g.in_per_group();
  const std::size_t cout_g = g.out_per_group();
  std::vector<ValidRange> ranges(g.kernel);
  for (std::size_t k = 0; k < g.kernel; ++k) ranges[k] = valid_range(g, k);

#pragma omp parallel for schedule(static)
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const std::size_t group = o / cout_g;
    for (std::size_t ic = 0; ic < cin_g; ++ic)
      for (std::size_t k = 0; k < g.kernel; ++k) {
        const auto [lo, hi] = ranges[k];
        const long shift = static_cast<long>(k) - static_cast<long>(g.padding);
        T acc = 0;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* gy = grad_y.data() + (n * g.out_channels + o) * out_len;
          const T* xr = x.data() + (n * g.in_channels + group * cin_g + ic) * g.in_length;
          if (g.stride == 1) {
            const T* xs = xr + (static_cast<long>(lo) + shift);
            const T* gs = gy + lo;
            const std::size_t len = hi - lo;
            T part = 0;
#pragma omp simd reduction(+ : part)
            for (std::size_t t = 0; t < len; ++t) part += gs[t] * xs[t];
            acc += part;
          } else {
            for (std::size_t t = lo; t < hi; ++t) acc += gy[t] * xr[static_cast<long>(t * g.stride) + shift];
          }
        }
        grad_w[(o * cin_g + ic) * g.kernel + k] += acc;
      }
  }
}

template <typename T>
void avgpool1d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y) {
  const std::size_t out_len = g.out_length();
  const T inv = T(1) / static_cast<T>(g.kernel);
#pragma omp parallel for schedule(static)
  for (std::size_t row = 0; row < g.batch * g.channels; ++row) {
    const T* xr = x.data() + row * g.in_length;
    T* yr = y.data() + row * out_len;
    for (std::size_t t = 0; t < out_len; ++t) {
      T acc = 0;
      for (std::size_t k = 0; k < g.kernel; ++k) acc += xr[t * g.stride + k];
      yr[t] = acc * inv;
    }
  }
}

template <typename T>
void avgpool1d_backward(const PoolGeometry& g, std::span<const T> grad_y, std::span<T> grad_x) {
  const std::size_t out_len = g.out_length();
  const T inv = T(1) / static_cast<T>(g.kernel);
#pragma omp parallel for schedule(static)
  for (std::size_t row = 0; row < g.batch * g.channels; ++row) {
    T* gx = grad_x.data() + row * g.in_length;
    const T* gy = grad_y.data() + row * out_len;
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t k = 0; k < g.kernel; ++k) gx[t * g.stride + k] += gy[t] * inv;
  }
}

template <typename T>
void maxpool1d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax) {
  const std::size_t out_len = g.out_length();
#pragma omp parallel for schedule(static)
  for (std::size_t row = 0; row < g.batch * g.channels; ++row) {
    const std::size_t base = row * g.in_length;
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t best = base + t * g.stride;
      for (std::size_t k = 1; k < g.kernel; ++k)
        if (x[base + t * g.stride + k] > x[best]) best = base + t * g.stride + k;
      y[row * out_len + t] = x[best];
      argmax[row * out_len + t] = best;
    }
  }
}

template <typename T>
void maxpool1d_backward(const PoolGeometry& g, std::span<const T> grad_y, std::span<const std::size_t> argmax,
                        std::span<T> grad_x) {
  const std::size_t out_len = g.out_length();
  // Windows of one row never reach another row, so rows are independent.
#pragma omp parallel for schedule(static)
  for (std::size_t row = 0; row < g.batch * g.channels; ++row)
    for (std::size_t t = 0; t < out_len; ++t) grad_x[argmax[row * out_len + t]] += grad_y[row * out_len + t];
}

template <typename T>
void batchnorm_train_forward(const NormGeometry& g, std::span<const T> x, std::span<const T> gamma,
                             std::span<const T> beta, T eps, std::span<T> y, std::span<T> x_hat, std::span<T> mean,
                             std::span<T> var, std::span<T> inv_std) {
  const T count = static_cast<T>(g.batch * g.length);
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < g.channels; ++c) {
    T sum = 0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* xr = x.data() + (n * g.channels + c) * g.length;
      T part = 0;
#pragma omp simd reduction(+ : part)
      for (std::size_t t = 0; t < g.length; ++t) part += xr[t];
      sum += part;
    }
    const T mu = sum / count;
    T sq = 0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* xr = x.data() + (n * g.channels + c) * g.length;
      T part = 0;
#pragma omp simd reduction(+ : part)
      for (std::size_t t = 0; t < g.length; ++t) part += (xr[t] - mu) * (xr[t] - mu);
      sq += part;
    }
    mean[c] = mu;
    var[c] = sq / count;
    const T inv = T(1) / std::sqrt(var[c] + eps);
    inv_std[c] = inv;
    const T gm = gamma[c];
    const T bt = beta[c];
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t off = (n * g.channels + c) * g.length;
      const T* xr = x.data() + off;
      T* xh = x_hat.data() + off;
      T* yr = y.data() + off;
#pragma omp simd
      for (std::size_t t = 0; t < g.length; ++t) {
        xh[t] = (xr[t] - mu) * inv;
        yr[t] = gm * xh[t] + bt;
      }
    }
  }
}

template <typename T>
void batchnorm_train_backward(const NormGeometry& g, std::span<const T> grad_y, std::span<const T> x_hat,
                              std::span<const T> gamma, std::span<const T> inv_std, std::span<T> grad_x,
                              std::span<T> grad_gamma, std::span<T> grad_beta) {
  const T count = static_cast<T>(g.batch * g.length);
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < g.channels; ++c) {
    T sum_dy = 0;
    T sum_dy_xhat = 0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t off = (n * g.channels + c) * g.length;
      const T* gy = grad_y.data() + off;
      const T* xh = x_hat.data() + off;
      T a = 0;
      T b = 0;
#pragma omp simd reduction(+ : a, b)
      for (std::size_t t = 0; t < g.length; ++t) {
        a += gy[t];
        b += gy[t] * xh[t];
      }
      sum_dy += a;
      sum_dy_xhat += b;
    }
    if (!grad_gamma.empty()) grad_gamma[c] += sum_dy_xhat;
    if (!grad_beta.empty()) grad_beta[c] += sum_dy;
    if (grad_x.empty()) continue;
    const T scale = gamma[c] * inv_std[c] / count;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t off = (n * g.channels + c) * g.length;
      const T* gy = grad_y.data() + off;
      const T* xh = x_hat.data() + off;
      T* gx = grad_x.data() + off;
#pragma omp simd
      for (std::size_t t = 0; t < g.length; ++t) gx[t] += scale * (count * gy[t] - sum_dy - xh[t] * sum_dy_xhat);
    }
  }
}

#include "kernels_instantiate.inc"

RAWNEXT_INSTANTIATE(float)
RAWNEXT_INSTANTIATE(double)

}  // namespace rawnext::kernels::parallel
