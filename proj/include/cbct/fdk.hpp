#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "cbct/geometry.hpp"
#include "cbct/ops.hpp"
#include "cbct/projector.hpp"

namespace cbct {

/// Multiplies each pixel by SDD / sqrt(SDD^2 + u^2 + v^2). Diagonal, so it
/// is its own transpose.
template <typename T>
void cosine_weight(std::span<T> projections, const ConeBeamGeometry& geom) {
  const std::size_t per_view = geom.det_rows * geom.det_cols;
  if (projections.size() != geom.n_views() * per_view)
    throw std::invalid_argument("cosine_weight: size does not match geometry");
  const double d2 = geom.sdd_mm * geom.sdd_mm;
  std::vector<double> w(per_view);
  for (std::size_t r = 0; r < geom.det_rows; ++r) {
    const double v = geom.v_offset(static_cast<double>(r));
    for (std::size_t c = 0; c < geom.det_cols; ++c) {
      const double u = geom.u_offset(static_cast<double>(c));
      w[r * geom.det_cols + c] = geom.sdd_mm / std::sqrt(d2 + u * u + v * v);
    }
  }
  for (std::size_t i = 0; i < projections.size(); ++i)
    projections[i] = static_cast<T>(static_cast<double>(projections[i]) * w[i % per_view]);
}

/// Band-limited Ram-Lak filter applied by zero-padded FFT convolution.
///
/// The frequency response is the DFT of the sampled spatial kernel
/// h(0) = 1/(4 du^2), h(odd n) = -1/(pi^2 n^2 du^2), h(even n) = 0, times du
/// (quadrature weight), symmetrized and with the DC bin set to zero.
class RampFilter {
 public:
  RampFilter(std::size_t det_cols, double spacing_mm)
      : cols_(det_cols), spacing_(spacing_mm), fft_(std::make_shared<Eigen::FFT<double>>()) {
    if (det_cols == 0 || !(spacing_mm > 0))
      throw std::invalid_argument("RampFilter: need det_cols >= 1 and spacing > 0");
    padded_ = std::bit_ceil(2 * det_cols);
    std::vector<std::complex<double>> h(padded_), spec;
    const double du2 = spacing_mm * spacing_mm;
    const auto N = static_cast<long long>(padded_);
    for (long long n = 0; n < N; ++n) {
      const long long m = n < N / 2 ? n : n - N;
      double v = 0.0;
      if (m == 0) {
        v = 1.0 / (4.0 * du2);
      } else if (m % 2 != 0) {
        v = -1.0 / (std::numbers::pi * std::numbers::pi * static_cast<double>(m * m) * du2);
      }
      h[static_cast<std::size_t>(n)] = v;
    }
    fft_->fwd(spec, h);
    response_.resize(padded_);
    for (std::size_t k = 0; k < padded_; ++k) {
      const std::size_t mirror = (padded_ - k) % padded_;
      response_[k] = 0.5 * (spec[k].real() + spec[mirror].real()) * spacing_mm;
    }
    response_[0] = 0.0;
  }

  std::size_t det_cols() const { return cols_; }
  std::size_t padded_length() const { return padded_; }
  double spacing() const { return spacing_; }
  const std::vector<double>& response() const { return response_; }

  /// Filters every consecutive run of det_cols values. Self-transpose.
  template <typename T>
  void apply_rows(std::span<T> data) const {
    if (data.size() % cols_ != 0)
      throw std::invalid_argument("RampFilter: data is not a whole number of rows");
    std::vector<std::complex<double>> buf(padded_), spec(padded_), back(padded_);
    for (std::size_t off = 0; off < data.size(); off += cols_) {
      for (std::size_t i = 0; i < padded_; ++i)
        buf[i] = i < cols_ ? static_cast<double>(data[off + i]) : 0.0;
      fft_->fwd(spec, buf);
      for (std::size_t k = 0; k < padded_; ++k) spec[k] *= response_[k];
      fft_->inv(back, spec);
      for (std::size_t i = 0; i < cols_; ++i) data[off + i] = static_cast<T>(back[i].real());
    }
  }

 private:
  std::size_t cols_;
  std::size_t padded_ = 0;
  double spacing_;
  std::vector<double> response_;
  std::shared_ptr<Eigen::FFT<double>> fft_;
};

template <typename T>
void ramp_filter_rows(std::span<T> projections, const RampFilter& filter) {
  filter.apply_rows(projections);
}

struct BackprojectStats {
  std::size_t behind_source = 0;  // voxel/view pairs with U <= 0
};

/// Full-scan circular FDK: cosine weighting, row-wise ramp filtering and
/// voxel-driven (SID/U)^2-weighted backprojection, scaled by dBeta/2 with
/// dBeta = 2 pi / n_views. Holds the filter so repeated use is cheap.
class FdkOperator {
 public:
  FdkOperator(ConeBeamGeometry geom, VolumeGrid grid)
      : geom_(std::move(geom)),
        grid_(grid),
        // Filtering runs on the isocenter-scaled detector so the kernel's
        // 1/du^2 units match the object coordinates.
        filter_(geom_.det_cols, geom_.det_pixel_mm * geom_.sid_mm / geom_.sdd_mm) {
    geom_.validate();
    grid_.validate();
    if (geom_.n_views() == 0) throw std::invalid_argument("fdk: need at least one view");
  }

  const ConeBeamGeometry& geometry() const { return geom_; }
  const VolumeGrid& grid() const { return grid_; }
  const RampFilter& filter() const { return filter_; }
  std::size_t projection_size() const { return geom_.n_views() * geom_.det_rows * geom_.det_cols; }

  /// Visits every (voxel, pixel, weight) entry of the backprojection.
  template <typename Fn>
  BackprojectStats for_each_backprojection_entry(Fn&& fn) const {
    BackprojectStats stats;
    const double dbeta_half = std::numbers::pi / static_cast<double>(geom_.n_views());
    const double pitch = geom_.det_pixel_mm;
    const double c_mid = (static_cast<double>(geom_.det_cols) - 1.0) / 2.0;
    const double r_mid = (static_cast<double>(geom_.det_rows) - 1.0) / 2.0;
    const auto cols = static_cast<long long>(geom_.det_cols);
    const auto rows = static_cast<long long>(geom_.det_rows);
    for (std::size_t v = 0; v < geom_.n_views(); ++v) {
      const ViewPose pose = view_pose(geom_, v);
      const std::size_t view_off = v * geom_.det_rows * geom_.det_cols;
      for (std::size_t j = 0; j < grid_.ny; ++j)
        for (std::size_t i = 0; i < grid_.nx; ++i) {
          const Vec3 x0 = grid_.center(i, j, 0);
          const Vec3 rel{x0[0] - pose.source[0], x0[1] - pose.source[1], 0.0};
          const double U = dot(rel, pose.central_dir);
          if (!(U > 0)) {
            stats.behind_source += grid_.nz;
            continue;
          }
          const double mag = geom_.sdd_mm / U;
          const double col = dot(rel, pose.u_axis) * mag / pitch + c_mid;
          const double wdist = (geom_.sid_mm / U) * (geom_.sid_mm / U) * dbeta_half;
          const double cf = std::floor(col);
          const auto c0 = static_cast<long long>(cf);
          const double wc1 = col - cf;
          for (std::size_t k = 0; k < grid_.nz; ++k) {
            const double z = grid_.center(i, j, k)[2];
            const double row = z * mag / pitch + r_mid;
            const double rf = std::floor(row);
            const auto r0 = static_cast<long long>(rf);
            const double wr1 = row - rf;
            const std::size_t voxel = grid_.index(i, j, k);
            for (int dr = 0; dr < 2; ++dr) {
              const long long rr = r0 + dr;
              if (rr < 0 || rr >= rows) continue;
              const double wr = dr ? wr1 : 1.0 - wr1;
              for (int dc = 0; dc < 2; ++dc) {
                const long long cc = c0 + dc;
                if (cc < 0 || cc >= cols) continue;
                const double w = wr * (dc ? wc1 : 1.0 - wc1) * wdist;
                if (w != 0.0)
                  fn(voxel, view_off + static_cast<std::size_t>(rr * cols + cc), w);
              }
            }
          }
        }
    }
    return stats;
  }

  template <typename T>
  BackprojectStats backproject(std::span<const T> filtered, std::span<T> volume) const {
    check(filtered.size(), volume.size());
    std::vector<double> acc(volume.size(), 0.0);
    auto stats = for_each_backprojection_entry([&](std::size_t voxel, std::size_t pixel, double w) {
      acc[voxel] += w * static_cast<double>(filtered[pixel]);
    });
    for (std::size_t i = 0; i < acc.size(); ++i) volume[i] = static_cast<T>(acc[i]);
    return stats;
  }

  template <typename T>
  void backproject_transpose(std::span<const T> volume, std::span<T> projections) const {
    check(projections.size(), volume.size());
    std::vector<double> acc(projections.size(), 0.0);
    for_each_backprojection_entry([&](std::size_t voxel, std::size_t pixel, double w) {
      acc[pixel] += w * static_cast<double>(volume[voxel]);
    });
    for (std::size_t i = 0; i < acc.size(); ++i) projections[i] = static_cast<T>(acc[i]);
  }

  template <typename T>
  void reconstruct(std::span<const T> projections, std::span<T> volume) const {
    check(projections.size(), volume.size());
    std::vector<T> work(projections.begin(), projections.end());
    for (T v : work)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::invalid_argument("fdk: non-finite projection value");
    cosine_weight<T>(work, geom_);
    filter_.apply_rows<T>(work);
    backproject<T>(work, volume);
  }

  /// Exact transpose of reconstruct().
  template <typename T>
  void transpose(std::span<const T> volume, std::span<T> projections) const {
    backproject_transpose<T>(volume, projections);
    filter_.apply_rows<T>(projections);
    cosine_weight<T>(projections, geom_);
  }

  template <typename T>
  std::vector<T> reconstruct(std::span<const T> projections) const {
    std::vector<T> out(grid_.size());
    reconstruct<T>(projections, out);
    return out;
  }

 private:
  void check(std::size_t proj_size, std::size_t vol_size) const {
    if (proj_size != projection_size())
      throw std::invalid_argument("fdk: projection size does not match geometry");
    if (vol_size != grid_.size())
      throw std::invalid_argument("fdk: volume size does not match grid");
  }

  ConeBeamGeometry geom_;
  VolumeGrid grid_;
  RampFilter filter_;
};

template <typename T>
std::vector<T> fdk_reconstruct(const ProjectionStack<T>& projections, const VolumeGrid& grid) {
  return FdkOperator(projections.geometry, grid).reconstruct<T>(projections.data);
}

template <typename T>
std::vector<T> fdk_transpose(std::span<const T> volume, const ConeBeamGeometry& geom,
                             const VolumeGrid& grid) {
  FdkOperator op(geom, grid);
  std::vector<T> out(op.projection_size());
  op.transpose<T>(volume, out);
  return out;
}

/// Dot-product test of the whole FDK chain against its transpose.
template <typename T>
double fdk_adjoint_test(const ConeBeamGeometry& geom, const VolumeGrid& grid, std::uint64_t seed) {
  FdkOperator op(geom, grid);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<T> g(op.projection_size()), x(grid.size());
  for (auto& v : g) v = static_cast<T>(uni(rng));
  for (auto& v : x) v = static_cast<T>(uni(rng));
  std::vector<T> fg(x.size()), ftx(g.size());
  op.reconstruct<T>(g, fg);
  op.transpose<T>(x, ftx);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < x.size(); ++i) lhs += static_cast<double>(fg[i]) * x[i];
  for (std::size_t i = 0; i < g.size(); ++i) rhs += static_cast<double>(g[i]) * ftx[i];
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), std::numeric_limits<double>::min());
}

/// Differentiable FDK layer: [..., views, rows, cols] -> [..., nz, ny, nx].
/// The operator is shared so the layer and its backward reuse one filter.
template <typename T>
Tensor<T> fdk_layer(const Tensor<T>& projections, std::shared_ptr<const FdkOperator> op) {
  const VolLayout l = vol_layout(projections.shape(), "fdk_layer");
  const auto& g = op->geometry();
  if (l.depth != g.n_views() || l.height != g.det_rows || l.width != g.det_cols)
    throw std::invalid_argument("fdk_layer: tensor " + shape_str(projections.shape()) +
                                " does not match the geometry");
  const auto& grid = op->grid();
  return linear_map<T>(
      projections, {grid.nz, grid.ny, grid.nx},
      [op](std::span<const T> in, std::span<T> out) { op->reconstruct<T>(in, out); },
      [op](std::span<const T> in, std::span<T> out) { op->transpose<T>(in, out); }, "fdk");
}

}  // namespace cbct
