#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/tensor.hpp"

namespace cbct {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <typename T>
void accumulate(Node<T>& parent, std::span<const T> g, T factor = T(1)) {
  if (!parent.requires_grad) return;
  auto& pg = parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) pg[i] += factor * g[i];
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), "add", {a, b}, [](detail::Node<T>& self) {
    detail::accumulate<T>(*self.parents[0], self.grad);
    detail::accumulate<T>(*self.parents[1], self.grad);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node<T>& self) {
    detail::accumulate<T>(*self.parents[0], self.grad);
    detail::accumulate<T>(*self.parents[1], self.grad, T(-1));
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), "scale", {a},
                            [factor](detail::Node<T>& self) {
                              detail::accumulate<T>(*self.parents[0], self.grad, factor);
                            });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return Tensor<T>::from_op(Shape{1}, {acc}, "sum", {a}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& pg = p.ensure_grad();
    const T g = self.grad[0];
    for (auto& v : pg) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Elementwise product; used for inner products in tests and diagnostics.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

/// Mean absolute error. The subgradient at ties is 0.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "l1_loss");
  auto p = pred.data(), t = target.data();
  T acc = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - t[i]);
  const T inv_n = T(1) / static_cast<T>(p.size());
  return Tensor<T>::from_op(
      Shape{1}, {acc * inv_n}, "l1_loss", {pred, target}, [inv_n](detail::Node<T>& self) {
        auto& pp = *self.parents[0];
        auto& pt = *self.parents[1];
        const T g = self.grad[0] * inv_n;
        auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
        if (pp.requires_grad) {
          auto& gp = pp.ensure_grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * sign(pp.data[i] - pt.data[i]);
        }
        if (pt.requires_grad) {
          auto& gt = pt.ensure_grad();
          for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * sign(pp.data[i] - pt.data[i]);
        }
      });
}

/// Concatenates along the channel axis. All other extents must agree.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape& ref = parts[0].shape();
  const VolLayout l0 = vol_layout(ref, "concat_channels");
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const VolLayout l = vol_layout(p.shape(), "concat_channels");
    if (p.rank() != ref.size() || l.batch != l0.batch || l.depth != l0.depth ||
        l.height != l0.height || l.width != l0.width)
      throw std::invalid_argument("concat_channels: spatial mismatch " + shape_str(ref) + " vs " +
                                  shape_str(p.shape()));
    channels.push_back(l.channels);
    total += l.channels;
  }
  const std::size_t s = l0.spatial();
  std::vector<T> out(l0.batch * total * s);
  for (std::size_t n = 0; n < l0.batch; ++n) {
    std::size_t offset = n * total * s;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto src = parts[k].data().subspan(n * channels[k] * s, channels[k] * s);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += channels[k] * s;
    }
  }
  return Tensor<T>::from_op(
      with_channels(ref, total), std::move(out), "concat_channels", parts,
      [channels, total, s, batch = l0.batch](detail::Node<T>& self) {
        for (std::size_t n = 0; n < batch; ++n) {
          std::size_t offset = n * total * s;
          for (std::size_t k = 0; k < channels.size(); ++k) {
            auto& p = *self.parents[k];
            const std::size_t len = channels[k] * s;
            if (p.requires_grad) {
              auto& g = p.ensure_grad();
              for (std::size_t i = 0; i < len; ++i) g[n * len + i] += self.grad[offset + i];
            }
            offset += len;
          }
        }
      });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels<T>(std::vector<Tensor<T>>{a, b});
}

/// Channels [begin, begin+count).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  const VolLayout l = vol_layout(a.shape(), "slice_channels");
  if (count == 0 || begin + count > l.channels)
    throw std::invalid_argument("slice_channels: range out of bounds for " + shape_str(a.shape()));
  const std::size_t s = l.spatial();
  std::vector<T> out(l.batch * count * s);
  auto src = a.data();
  for (std::size_t n = 0; n < l.batch; ++n)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((n * l.channels + begin) * s), count * s,
                out.begin() + static_cast<std::ptrdiff_t>(n * count * s));
  return Tensor<T>::from_op(
      with_channels(a.shape(), count), std::move(out), "slice_channels", {a},
      [l, begin, count, s](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t n = 0; n < l.batch; ++n)
          for (std::size_t i = 0; i < count * s; ++i)
            g[(n * l.channels + begin) * s + i] += self.grad[n * count * s + i];
      });
}

/// Signature of a linear operator applied to one channel of one sample.
template <typename T>
using LinearFn = std::function<void(std::span<const T> in, std::span<T> out)>;

/// Wraps a linear map (with its exact transpose) as a differentiable layer.
/// The map is applied independently to every (batch, channel) slab; the
/// spatial extents change from the input's to `out_spatial`.
template <typename T>
Tensor<T> linear_map(const Tensor<T>& x, const std::array<std::size_t, 3>& out_spatial,
                     LinearFn<T> forward, LinearFn<T> transpose, std::string op) {
  const VolLayout l = vol_layout(x.shape(), op.c_str());
  const std::size_t in_s = l.spatial();
  const std::size_t out_s = out_spatial[0] * out_spatial[1] * out_spatial[2];
  const std::size_t slabs = l.batch * l.channels;
  std::vector<T> out(slabs * out_s, T(0));
  auto src = x.data();
  for (std::size_t k = 0; k < slabs; ++k)
    forward(src.subspan(k * in_s, in_s), std::span<T>(out).subspan(k * out_s, out_s));
  return Tensor<T>::from_op(
      with_spatial(x.shape(), out_spatial[0], out_spatial[1], out_spatial[2]), std::move(out),
      std::move(op), {x}, [transpose, slabs, in_s, out_s](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        std::vector<T> tmp(in_s);
        for (std::size_t k = 0; k < slabs; ++k) {
          std::fill(tmp.begin(), tmp.end(), T(0));
          transpose(std::span<const T>(self.grad).subspan(k * out_s, out_s), tmp);
          for (std::size_t i = 0; i < in_s; ++i) g[k * in_s + i] += tmp[i];
        }
      });
}

}  // namespace cbct
