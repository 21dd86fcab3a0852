#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "cbct/tensor.hpp"

namespace cbct {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer entries; the depth axis is processed in slabs.
inline constexpr std::size_t kIm2colBudget = std::size_t{1} << 22;

struct ConvGeom {
  std::size_t c_in, c_out, k, depth, height, width;
  std::size_t taps() const { return k * k * k; }
  std::size_t plane() const { return height * width; }
  std::size_t slab_depth() const {
    const std::size_t per_plane = c_in * taps() * plane();
    return std::clamp<std::size_t>(kIm2colBudget / std::max<std::size_t>(per_plane, 1), 1, depth);
  }
};

// Gathers the zero-padded neighbourhoods of planes [z0, z1) into
// col[(ci*k^3 + tap), p]. With scatter=true the direction is reversed and
// col is accumulated back into the input layout.
template <typename T, bool Scatter>
void im2col_slab(const ConvGeom& g, std::conditional_t<Scatter, T*, const T*> image, T* col_raw,
                 std::size_t z0, std::size_t z1) {
  const auto r = static_cast<std::ptrdiff_t>(g.k / 2);
  const auto D = static_cast<std::ptrdiff_t>(g.depth), H = static_cast<std::ptrdiff_t>(g.height),
             W = static_cast<std::ptrdiff_t>(g.width);
  const std::size_t cols = (z1 - z0) * g.plane();
  std::conditional_t<Scatter, const T*, T*> col = col_raw;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    const std::size_t chan = ci * g.depth * g.plane();
    for (std::ptrdiff_t kz = -r; kz <= r; ++kz)
      for (std::ptrdiff_t ky = -r; ky <= r; ++ky)
        for (std::ptrdiff_t kx = -r; kx <= r; ++kx, ++row) {
          auto dst = col + row * cols;
          const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -kx);
          const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(W, W - kx);
          std::size_t p = 0;
          for (auto z = static_cast<std::ptrdiff_t>(z0); z < static_cast<std::ptrdiff_t>(z1); ++z) {
            const std::ptrdiff_t sz = z + kz;
            for (std::ptrdiff_t y = 0; y < H; ++y, p += g.width) {
              const std::ptrdiff_t sy = y + ky;
              if (sz < 0 || sz >= D || sy < 0 || sy >= H) {
                if constexpr (!Scatter) std::fill_n(dst + p, g.width, T(0));
                continue;
              }
              const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(chan) + (sz * H + sy) * W + kx;
              if constexpr (Scatter) {
                for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) image[base + x] += dst[p + x];
              } else {
                for (std::ptrdiff_t x = 0; x < x_lo; ++x) dst[p + x] = T(0);
                for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) dst[p + x] = image[base + x];
                for (std::ptrdiff_t x = x_hi; x < W; ++x) dst[p + x] = T(0);
              }
            }
          }
        }
  }
}

}  // namespace detail

/// 3D cross-correlation, stride 1, zero padding (k-1)/2 (shape preserving).
///
/// input [C_in,D,H,W] or [N,C_in,D,H,W]; weight [C_out,C_in,k,k,k]; bias [C_out].
/// Runs as im2col + GEMM over depth slabs.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  const VolLayout l = vol_layout(input.shape(), "conv3d");
  const Shape& ws = weight.shape();
  if (ws.size() != 5 || ws[2] != ws[3] || ws[3] != ws[4] || ws[2] % 2 == 0)
    throw std::invalid_argument("conv3d: weight must be [C_out,C_in,k,k,k] with odd k, got " +
                                shape_str(ws));
  if (ws[1] != l.channels)
    throw std::invalid_argument("conv3d: input has " + std::to_string(l.channels) +
                                " channels but weight expects " + std::to_string(ws[1]));
  if (bias.shape() != Shape{ws[0]})
    throw std::invalid_argument("conv3d: bias must be [" + std::to_string(ws[0]) + "], got " +
                                shape_str(bias.shape()));

  const detail::ConvGeom g{l.channels, ws[0], ws[2], l.depth, l.height, l.width};
  const std::size_t K = g.c_in * g.taps();
  const std::size_t S = l.spatial();
  const std::size_t slab = g.slab_depth();
  std::vector<T> out(l.batch * g.c_out * S);
  std::vector<T> col(K * slab * g.plane());

  detail::ConstRowMap<T> wmat(weight.data().data(), static_cast<Eigen::Index>(g.c_out),
                              static_cast<Eigen::Index>(K), Eigen::OuterStride<>(K));
  auto bvec = bias.data();
  for (std::size_t n = 0; n < l.batch; ++n) {
    const T* img = input.data().data() + n * g.c_in * S;
    T* dst = out.data() + n * g.c_out * S;
    for (std::size_t z0 = 0; z0 < g.depth; z0 += slab) {
      const std::size_t z1 = std::min(g.depth, z0 + slab);
      const std::size_t P = (z1 - z0) * g.plane();
      detail::im2col_slab<T, false>(g, img, col.data(), z0, z1);
      detail::ConstRowMap<T> cmat(col.data(), static_cast<Eigen::Index>(K),
                                  static_cast<Eigen::Index>(P), Eigen::OuterStride<>(P));
      detail::RowMap<T> omat(dst + z0 * g.plane(), static_cast<Eigen::Index>(g.c_out),
                             static_cast<Eigen::Index>(P), Eigen::OuterStride<>(S));
      omat.noalias() = wmat * cmat;
      for (std::size_t co = 0; co < g.c_out; ++co)
        omat.row(static_cast<Eigen::Index>(co)).array() += bvec[co];
    }
  }

  Shape out_shape = with_channels(input.shape(), g.c_out);
  return Tensor<T>::from_op(
      std::move(out_shape), std::move(out), "conv3d", {input, weight, bias},
      [g, K, S, slab, batch = l.batch](detail::Node<T>& self) {
        auto& in = *self.parents[0];
        auto& w = *self.parents[1];
        auto& b = *self.parents[2];
        std::vector<T> col(K * slab * g.plane());
        detail::ConstRowMap<T> wmat(w.data.data(), static_cast<Eigen::Index>(g.c_out),
                                    static_cast<Eigen::Index>(K), Eigen::OuterStride<>(K));
        T* gw = w.requires_grad ? w.ensure_grad().data() : nullptr;
        T* gb = b.requires_grad ? b.ensure_grad().data() : nullptr;
        T* gin = in.requires_grad ? in.ensure_grad().data() : nullptr;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* img = in.data.data() + n * g.c_in * S;
          const T* gout = self.grad.data() + n * g.c_out * S;
          for (std::size_t z0 = 0; z0 < g.depth; z0 += slab) {
            const std::size_t z1 = std::min(g.depth, z0 + slab);
            const std::size_t P = (z1 - z0) * g.plane();
            detail::ConstRowMap<T> gmat(gout + z0 * g.plane(), static_cast<Eigen::Index>(g.c_out),
                                        static_cast<Eigen::Index>(P), Eigen::OuterStride<>(S));
            if (gb) {
              for (std::size_t co = 0; co < g.c_out; ++co) {
                const T* row = gout + co * S + z0 * g.plane();
                T acc = T(0);
                for (std::size_t i = 0; i < P; ++i) acc += row[i];
                gb[co] += acc;
              }
            }
            if (gw) {
              detail::im2col_slab<T, false>(g, img, col.data(), z0, z1);
              detail::ConstRowMap<T> cmat(col.data(), static_cast<Eigen::Index>(K),
                                          static_cast<Eigen::Index>(P), Eigen::OuterStride<>(P));
              detail::RowMap<T> gwmat(gw, static_cast<Eigen::Index>(g.c_out),
                                      static_cast<Eigen::Index>(K), Eigen::OuterStride<>(K));
              gwmat.noalias() += gmat * cmat.transpose();
            }
            if (gin) {
              detail::RowMap<T> dcol(col.data(), static_cast<Eigen::Index>(K),
                                     static_cast<Eigen::Index>(P), Eigen::OuterStride<>(P));
              dcol.noalias() = wmat.transpose() * gmat;
              detail::im2col_slab<T, true>(g, gin + n * g.c_in * S, col.data(), z0, z1);
            }
          }
        }
      });
}

}  // namespace cbct
