#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/geometry.hpp"
#include "cbct/ops.hpp"

namespace cbct {

/// Per-view detector readings (line integrals), indexed (view, row, col)
/// with col fastest.
template <typename T>
struct ProjectionStack {
  ConeBeamGeometry geometry;
  std::vector<T> data;

  std::size_t expected_size() const {
    return geometry.n_views() * geometry.det_rows * geometry.det_cols;
  }
  void validate() const {
    geometry.validate();
    if (data.size() != expected_size())
      throw std::invalid_argument("projection stack: data size does not match geometry");
  }
};

namespace detail {

// Enumerates the trilinear sample weights of one ray. Samples sit at
// t = (k + 1/2) * step from `src`, restricted to the part of the segment
// src->dst inside the interpolation support of the grid (voxel centres
// padded by one voxel, since values beyond the grid are 0).
template <typename Fn>
void trace_ray(const Vec3& src, const Vec3& dst, const VolumeGrid& grid, double step, Fn&& fn) {
  const Vec3 delta = dst - src;
  const double len = norm(delta);
  if (!(len > 0)) return;
  const Vec3 dir = (1.0 / len) * delta;
  const std::array<std::size_t, 3> n{grid.nx, grid.ny, grid.nz};
  const double vox = grid.voxel_mm;

  double t0 = 0.0, t1 = len;
  for (int a = 0; a < 3; ++a) {
    const double half = (static_cast<double>(n[a]) + 1.0) / 2.0 * vox;
    if (dir[a] == 0.0) {
      if (src[a] <= -half || src[a] >= half) return;
      continue;
    }
    double ta = (-half - src[a]) / dir[a];
    double tb = (half - src[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return;

  const auto k_begin = static_cast<long long>(std::ceil(t0 / step - 0.5));
  const auto k_end = static_cast<long long>(std::floor(t1 / step - 0.5));
  const std::array<double, 3> centre{(static_cast<double>(n[0]) - 1.0) / 2.0,
                                     (static_cast<double>(n[1]) - 1.0) / 2.0,
                                     (static_cast<double>(n[2]) - 1.0) / 2.0};
  for (long long k = k_begin; k <= k_end; ++k) {
    const double t = (static_cast<double>(k) + 0.5) * step;
    std::array<long long, 3> i0{};
    std::array<double, 3> w1{};
    bool outside = false;
    for (int a = 0; a < 3; ++a) {
      const double f = (src[a] + t * dir[a]) / vox + centre[a];
      const double fl = std::floor(f);
      i0[a] = static_cast<long long>(fl);
      w1[a] = f - fl;
      if (i0[a] < -1 || i0[a] >= static_cast<long long>(n[a])) outside = true;
    }
    if (outside) continue;
    if (i0[0] >= 0 && i0[1] >= 0 && i0[2] >= 0 && i0[0] + 1 < static_cast<long long>(n[0]) &&
        i0[1] + 1 < static_cast<long long>(n[1]) && i0[2] + 1 < static_cast<long long>(n[2])) {
      const std::size_t sx = 1, sy = n[0], sz = n[0] * n[1];
      const std::size_t base = static_cast<std::size_t>(i0[2]) * sz + static_cast<std::size_t>(i0[1]) * sy +
                               static_cast<std::size_t>(i0[0]);
      const double wx[2] = {1.0 - w1[0], w1[0]};
      const double wy[2] = {1.0 - w1[1], w1[1]};
      const double wz[2] = {1.0 - w1[2], w1[2]};
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy) {
          const double wzy = wz[dz] * wy[dy];
          const std::size_t row = base + dz * sz + dy * sy;
          for (int dx = 0; dx < 2; ++dx) {
            const double w = wzy * wx[dx] * step;
            if (w != 0.0) fn(row + dx * sx, w);
          }
        }
      continue;
    }
    for (int dz = 0; dz < 2; ++dz) {
      const long long z = i0[2] + dz;
      if (z < 0 || z >= static_cast<long long>(n[2])) continue;
      const double wz = dz ? w1[2] : 1.0 - w1[2];
      for (int dy = 0; dy < 2; ++dy) {
        const long long y = i0[1] + dy;
        if (y < 0 || y >= static_cast<long long>(n[1])) continue;
        const double wzy = wz * (dy ? w1[1] : 1.0 - w1[1]);
        for (int dx = 0; dx < 2; ++dx) {
          const long long x = i0[0] + dx;
          if (x < 0 || x >= static_cast<long long>(n[0])) continue;
          const double w = wzy * (dx ? w1[0] : 1.0 - w1[0]) * step;
          if (w != 0.0)
            fn(static_cast<std::size_t>((z * static_cast<long long>(n[1]) + y) *
                                            static_cast<long long>(n[0]) +
                                        x),
               w);
        }
      }
    }
  }
}

inline void check_sizes(const ConeBeamGeometry& geom, const VolumeGrid& grid,
                        std::size_t volume_size, std::size_t proj_size, const char* who) {
  geom.validate();
  grid.validate();
  if (volume_size != grid.size())
    throw std::invalid_argument(std::string(who) + ": volume has " + std::to_string(volume_size) +
                                " voxels, grid expects " + std::to_string(grid.size()));
  const std::size_t expect = geom.n_views() * geom.det_rows * geom.det_cols;
  if (proj_size != expect)
    throw std::invalid_argument(std::string(who) + ": projections have " +
                                std::to_string(proj_size) + " values, geometry expects " +
                                std::to_string(expect));
}

}  // namespace detail

/// Marching step along each ray (half a voxel).
inline double ray_step(const VolumeGrid& grid) { return grid.voxel_mm / 2.0; }

/// Visits every (pixel, voxel, weight) entry of the discrete forward
/// operator. Both forward_project and transpose_project run through here,
/// so they are exact transposes of each other by construction.
template <typename Fn>
void for_each_system_entry(const ConeBeamGeometry& geom, const VolumeGrid& grid, Fn&& fn) {
  const double step = ray_step(grid);
  for (std::size_t v = 0; v < geom.n_views(); ++v) {
    const ViewPose pose = view_pose(geom, v);
    for (std::size_t r = 0; r < geom.det_rows; ++r)
      for (std::size_t c = 0; c < geom.det_cols; ++c) {
        const std::size_t pixel = (v * geom.det_rows + r) * geom.det_cols + c;
        const Vec3 target = pose.pixel_center(geom, static_cast<double>(r), static_cast<double>(c));
        detail::trace_ray(pose.source, target, grid, step,
                          [&](std::size_t voxel, double w) { fn(pixel, voxel, w); });
      }
  }
}

/// Line integrals (mm^-1 x mm) of an attenuation volume for every detector
/// pixel, by trilinear ray marching.
template <typename T>
void forward_project(std::span<const T> volume, const VolumeGrid& grid,
                     const ConeBeamGeometry& geom, std::span<T> out) {
  detail::check_sizes(geom, grid, volume.size(), out.size(), "forward_project");
  for (T v : volume)
    if (!std::isfinite(static_cast<double>(v)))
      throw std::invalid_argument("forward_project: non-finite volume value");
  std::vector<double> acc(out.size(), 0.0);
  for_each_system_entry(geom, grid, [&](std::size_t pixel, std::size_t voxel, double w) {
    acc[pixel] += w * static_cast<double>(volume[voxel]);
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(acc[i]);
}

template <typename T>
ProjectionStack<T> forward_project(std::span<const T> volume, const VolumeGrid& grid,
                                   const ConeBeamGeometry& geom) {
  ProjectionStack<T> out{geom, std::vector<T>(geom.n_views() * geom.det_rows * geom.det_cols)};
  forward_project<T>(volume, grid, geom, out.data);
  return out;
}

/// Exact algebraic transpose of forward_project (not a filtered backprojection).
template <typename T>
void transpose_project(std::span<const T> projections, const ConeBeamGeometry& geom,
                       const VolumeGrid& grid, std::span<T> out) {
  detail::check_sizes(geom, grid, out.size(), projections.size(), "transpose_project");
  std::vector<double> acc(out.size(), 0.0);
  for_each_system_entry(geom, grid, [&](std::size_t pixel, std::size_t voxel, double w) {
    acc[voxel] += w * static_cast<double>(projections[pixel]);
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(acc[i]);
}

template <typename T>
std::vector<T> transpose_project(const ProjectionStack<T>& projections, const VolumeGrid& grid) {
  std::vector<T> out(grid.size());
  transpose_project<T>(projections.data, projections.geometry, grid, out);
  return out;
}

/// |<Ax,y> - <x,A^T y>| / max(|<Ax,y>|, tiny) for seeded uniform random x, y.
template <typename T>
double adjoint_test(const ConeBeamGeometry& geom, const VolumeGrid& grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<T> x(grid.size()), y(geom.n_views() * geom.det_rows * geom.det_cols);
  for (auto& v : x) v = static_cast<T>(uni(rng));
  for (auto& v : y) v = static_cast<T>(uni(rng));
  std::vector<T> ax(y.size()), aty(x.size());
  forward_project<T>(x, grid, geom, ax);
  transpose_project<T>(y, geom, grid, aty);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += static_cast<double>(ax[i]) * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += static_cast<double>(x[i]) * aty[i];
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), std::numeric_limits<double>::min());
}

/// Differentiable projection layer: maps [..., 1?, nz, ny, nx] volumes to
/// [..., views, rows, cols] line integrals; backward is transpose_project.
/// Forward operator with the system matrix stored as CSR (float weights,
/// 32-bit voxel indices) when it has at most `max_entries` entries, and
/// traced on the fly otherwise.
class ProjectionOperator {
 public:
  static constexpr std::size_t kDefaultMaxEntries = std::size_t(48) << 20;

  ProjectionOperator(ConeBeamGeometry geom, VolumeGrid grid, std::size_t max_entries = kDefaultMaxEntries)
      : geom_(std::move(geom)), grid_(grid) {
    geom_.validate();
    grid_.validate();
    if (grid_.size() > std::numeric_limits<std::uint32_t>::max()) return;
    std::vector<std::size_t> row(projection_size() + 1, 0);
    std::size_t total = 0;
    for_each_system_entry(geom_, grid_, [&](std::size_t pixel, std::size_t, double) {
      ++row[pixel + 1];
      ++total;
    });
    if (total > max_entries) return;
    for (std::size_t i = 0; i < projection_size(); ++i) row[i + 1] += row[i];
    std::vector<std::uint32_t> col(total);
    std::vector<float> val(total);
    std::vector<std::size_t> fill(row.begin(), row.end() - 1);
    for_each_system_entry(geom_, grid_, [&](std::size_t pixel, std::size_t voxel, double w) {
      col[fill[pixel]] = static_cast<std::uint32_t>(voxel);
      val[fill[pixel]++] = static_cast<float>(w);
    });
    row_ = std::move(row);
    col_ = std::move(col);
    val_ = std::move(val);
  }

  const ConeBeamGeometry& geometry() const { return geom_; }
  const VolumeGrid& grid() const { return grid_; }
  std::size_t projection_size() const { return geom_.n_views() * geom_.det_rows * geom_.det_cols; }
  bool cached() const { return !row_.empty(); }
  std::size_t entries() const { return val_.size(); }

  template <typename T>
  void forward(std::span<const T> volume, std::span<T> out) const {
    if (!cached()) return forward_project<T>(volume, grid_, geom_, out);
    detail::check_sizes(geom_, grid_, volume.size(), out.size(), "forward_project");
    for (T v : volume)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::invalid_argument("forward_project: non-finite volume value");
    for (std::size_t p = 0; p < out.size(); ++p) {
      double acc = 0.0;
      for (std::size_t e = row_[p]; e < row_[p + 1]; ++e)
        acc += static_cast<double>(val_[e]) * static_cast<double>(volume[col_[e]]);
      out[p] = static_cast<T>(acc);
    }
  }

  template <typename T>
  void transpose(std::span<const T> projections, std::span<T> out) const {
    if (!cached()) return transpose_project<T>(projections, geom_, grid_, out);
    detail::check_sizes(geom_, grid_, out.size(), projections.size(), "transpose_project");
    std::vector<double> acc(out.size(), 0.0);
    for (std::size_t p = 0; p < projections.size(); ++p) {
      const double g = static_cast<double>(projections[p]);
      if (g == 0.0) continue;
      for (std::size_t e = row_[p]; e < row_[p + 1]; ++e) acc[col_[e]] += static_cast<double>(val_[e]) * g;
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(acc[i]);
  }

 private:
  ConeBeamGeometry geom_;
  VolumeGrid grid_;
  std::vector<std::size_t> row_;
  std::vector<std::uint32_t> col_;
  std::vector<float> val_;
};

template <typename T>
Tensor<T> projection_layer(const Tensor<T>& volume, std::shared_ptr<const ProjectionOperator> op) {
  const VolumeGrid& grid = op->grid();
  const ConeBeamGeometry& geom = op->geometry();
  const VolLayout l = vol_layout(volume.shape(), "projection_layer");
  if (l.depth != grid.nz || l.height != grid.ny || l.width != grid.nx)
    throw std::invalid_argument("projection_layer: tensor " + shape_str(volume.shape()) +
                                " does not match the grid");
  return linear_map<T>(
      volume, {geom.n_views(), geom.det_rows, geom.det_cols},
      [op](std::span<const T> in, std::span<T> out) { op->forward<T>(in, out); },
      [op](std::span<const T> in, std::span<T> out) { op->transpose<T>(in, out); }, "forward_project");
}

template <typename T>
Tensor<T> projection_layer(const Tensor<T>& volume, const ConeBeamGeometry& geom,
                           const VolumeGrid& grid) {
  const VolLayout l = vol_layout(volume.shape(), "projection_layer");
  if (l.depth != grid.nz || l.height != grid.ny || l.width != grid.nx)
    throw std::invalid_argument("projection_layer: tensor " + shape_str(volume.shape()) +
                                " does not match the grid");
  return linear_map<T>(
      volume, {geom.n_views(), geom.det_rows, geom.det_cols},
      [geom, grid](std::span<const T> in, std::span<T> out) {
        forward_project<T>(in, grid, geom, out);
      },
      [geom, grid](std::span<const T> in, std::span<T> out) {
        transpose_project<T>(in, geom, grid, out);
      },
      "forward_project");
}

}  // namespace cbct
