#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/tensor.hpp"

namespace cbct {

enum class Mode { train, eval };

/// Running mean/variance buffers of a batchnorm layer. Tensors so that they
/// travel through checkpoints with the parameters.
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
  bool populated = false;

  explicit RunningStats(std::size_t channels = 0)
      : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)), populated(channels > 0) {}
};

/// Per-channel normalization over (N,D,H,W).
///
/// Train mode uses biased batch statistics for the output and updates the
/// running stats with the unbiased variance by `momentum`. Eval mode uses
/// the running stats.
template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      RunningStats<T>& stats, Mode mode, T momentum = T(0.1), T eps = T(1e-5)) {
  const VolLayout l = vol_layout(input.shape(), "batchnorm3d");
  const std::size_t C = l.channels, S = l.spatial(), N = l.batch;
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw std::invalid_argument("batchnorm3d: gamma/beta must have " + std::to_string(C) +
                                " entries");
  if (mode == Mode::eval && (!stats.populated || stats.mean.numel() != C))
    throw std::invalid_argument("batchnorm3d: eval mode requires populated running statistics");

  auto x = input.data();
  const std::size_t M = N * S;
  std::vector<T> mean(C), inv_std(C);
  if (mode == Mode::train) {
    auto rm = stats.mean.mutable_data();
    auto rv = stats.var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0, ss = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(M);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / static_cast<double>(M);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = M > 1 ? ss / static_cast<double>(M - 1) : var;
      rm[c] = (T(1) - momentum) * rm[c] + momentum * static_cast<T>(mu);
      rv[c] = (T(1) - momentum) * rv[c] + momentum * static_cast<T>(unbiased);
    }
    stats.populated = true;
  } else {
    auto rm = stats.mean.data();
    auto rv = stats.var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = rm[c];
      inv_std[c] = T(1) / std::sqrt(rv[c] + eps);
    }
  }

  auto gm = gamma.data(), bt = beta.data();
  std::vector<T> out(x.size());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * S;
      for (std::size_t i = 0; i < S; ++i)
        out[off + i] = gm[c] * (x[off + i] - mean[c]) * inv_std[c] + bt[c];
    }

  return Tensor<T>::from_op(
      input.shape(), std::move(out), "batchnorm3d", {input, gamma, beta},
      [mean, inv_std, N, C, S, M, train = mode == Mode::train](detail::Node<T>& self) {
        auto& in = *self.parents[0];
        auto& ga = *self.parents[1];
        auto& be = *self.parents[2];
        const auto& dy = self.grad;
        for (std::size_t c = 0; c < C; ++c) {
          double sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) {
              const double xhat = (in.data[off + i] - mean[c]) * inv_std[c];
              sum_dy += dy[off + i];
              sum_dy_xhat += dy[off + i] * xhat;
            }
          }
          if (ga.requires_grad) ga.ensure_grad()[c] += static_cast<T>(sum_dy_xhat);
          if (be.requires_grad) be.ensure_grad()[c] += static_cast<T>(sum_dy);
          if (!in.requires_grad) continue;
          auto& dx = in.ensure_grad();
          const T g = ga.data[c];
          if (train) {
            // dx = g*inv_std/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
            const double k = static_cast<double>(g) * inv_std[c] / static_cast<double>(M);
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t off = (n * C + c) * S;
              for (std::size_t i = 0; i < S; ++i) {
                const double xhat = (in.data[off + i] - mean[c]) * inv_std[c];
                dx[off + i] += static_cast<T>(
                    k * (static_cast<double>(M) * dy[off + i] - sum_dy - xhat * sum_dy_xhat));
              }
            }
          } else {
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t off = (n * C + c) * S;
              for (std::size_t i = 0; i < S; ++i) dx[off + i] += g * inv_std[c] * dy[off + i];
            }
          }
        }
      });
}

/// 2x2x2 mean pooling with stride 2.
template <typename T>
Tensor<T> avgpool3d(const Tensor<T>& input) {
  const VolLayout l = vol_layout(input.shape(), "avgpool3d");
  if (l.depth % 2 || l.height % 2 || l.width % 2)
    throw std::invalid_argument("avgpool3d: extents must be even, got " +
                                shape_str(input.shape()));
  const std::size_t D = l.depth / 2, H = l.height / 2, W = l.width / 2;
  const std::size_t slabs = l.batch * l.channels;
  auto x = input.data();
  std::vector<T> out(slabs * D * H * W, T(0));
  auto src_index = [&](std::size_t k, std::size_t z, std::size_t y, std::size_t xx) {
    return ((k * l.depth + z) * l.height + y) * l.width + xx;
  };
  for (std::size_t k = 0; k < slabs; ++k)
    for (std::size_t z = 0; z < D; ++z)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          T acc = T(0);
          for (std::size_t dz = 0; dz < 2; ++dz)
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx)
                acc += x[src_index(k, 2 * z + dz, 2 * y + dy, 2 * xx + dx)];
          out[((k * D + z) * H + y) * W + xx] = acc * T(0.125);
        }
  return Tensor<T>::from_op(
      with_spatial(input.shape(), D, H, W), std::move(out), "avgpool3d", {input},
      [l, D, H, W, slabs](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t k = 0; k < slabs; ++k)
          for (std::size_t z = 0; z < l.depth; ++z)
            for (std::size_t y = 0; y < l.height; ++y)
              for (std::size_t x = 0; x < l.width; ++x)
                g[((k * l.depth + z) * l.height + y) * l.width + x] +=
                    T(0.125) * self.grad[((k * D + z / 2) * H + y / 2) * W + x / 2];
      });
}

namespace detail {

// Two-tap linear interpolation weights for x2 upsampling with half-pixel
// centers: source coordinate (o + 0.5)/2 - 0.5, clamped at 0.
struct LerpTap {
  std::size_t i0, i1;
  double w1;
};

inline std::vector<LerpTap> upsample_taps(std::size_t n_in) {
  std::vector<LerpTap> taps(2 * n_in);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    const double src = std::max(0.0, (static_cast<double>(o) + 0.5) * 0.5 - 0.5);
    const auto i0 = std::min(static_cast<std::size_t>(src), n_in - 1);
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

/// Trilinear x2 upsampling, align_corners off.
template <typename T>
Tensor<T> upsample_trilinear3d(const Tensor<T>& input) {
  const VolLayout l = vol_layout(input.shape(), "upsample_trilinear3d");
  const auto tz = detail::upsample_taps(l.depth);
  const auto ty = detail::upsample_taps(l.height);
  const auto tx = detail::upsample_taps(l.width);
  const std::size_t D = tz.size(), H = ty.size(), W = tx.size();
  const std::size_t slabs = l.batch * l.channels;

  // Visits every (output index, input index, weight) triple; shared by the
  // forward pass and its transpose.
  auto visit = [=](auto&& fn) {
    for (std::size_t k = 0; k < slabs; ++k)
      for (std::size_t z = 0; z < D; ++z)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t o = ((k * D + z) * H + y) * W + x;
            const std::array<std::size_t, 2> iz{tz[z].i0, tz[z].i1}, iy{ty[y].i0, ty[y].i1},
                ix{tx[x].i0, tx[x].i1};
            const std::array<double, 2> wz{1 - tz[z].w1, tz[z].w1}, wy{1 - ty[y].w1, ty[y].w1},
                wx{1 - tx[x].w1, tx[x].w1};
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int c = 0; c < 2; ++c)
                  fn(o, ((k * l.depth + iz[a]) * l.height + iy[b]) * l.width + ix[c],
                     static_cast<T>(wz[a] * wy[b] * wx[c]));
          }
  };

  auto x = input.data();
  std::vector<T> out(slabs * D * H * W, T(0));
  visit([&](std::size_t o, std::size_t i, T w) { out[o] += w * x[i]; });
  return Tensor<T>::from_op(with_spatial(input.shape(), D, H, W), std::move(out),
                            "upsample_trilinear3d", {input}, [visit](detail::Node<T>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              auto& g = p.ensure_grad();
                              visit([&](std::size_t o, std::size_t i, T w) {
                                g[i] += w * self.grad[o];
                              });
                            });
}

/// Parametric ReLU with one learned slope per channel.
template <typename T>
Tensor<T> prelu(const Tensor<T>& input, const Tensor<T>& slope) {
  const VolLayout l = vol_layout(input.shape(), "prelu");
  if (slope.shape() != Shape{l.channels})
    throw std::invalid_argument("prelu: slope must have " + std::to_string(l.channels) +
                                " entries, got " + shape_str(slope.shape()));
  const std::size_t S = l.spatial(), C = l.channels;
  auto x = input.data();
  auto a = slope.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = (i / S) % C;
    out[i] = x[i] >= T(0) ? x[i] : a[c] * x[i];
  }
  return Tensor<T>::from_op(input.shape(), std::move(out), "prelu", {input, slope},
                            [S, C](detail::Node<T>& self) {
                              auto& in = *self.parents[0];
                              auto& sl = *self.parents[1];
                              T* gx = in.requires_grad ? in.ensure_grad().data() : nullptr;
                              T* ga = sl.requires_grad ? sl.ensure_grad().data() : nullptr;
                              for (std::size_t i = 0; i < in.data.size(); ++i) {
                                const std::size_t c = (i / S) % C;
                                const T v = in.data[i];
                                const T g = self.grad[i];
                                if (v >= T(0)) {
                                  if (gx) gx[i] += g;
                                } else {
                                  if (gx) gx[i] += sl.data[c] * g;
                                  if (ga) ga[c] += v * g;
                                }
                              }
                            });
}

}  // namespace cbct
