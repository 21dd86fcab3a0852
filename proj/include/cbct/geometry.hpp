#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbct {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

/// Circular-trajectory flat-panel cone-beam scan.
///
/// Conventions: rotation axis z, counter-clockwise, source at
/// (SID cos t, SID sin t, 0), detector centred on the central ray with
/// u-axis (-sin t, cos t, 0) and v-axis (0, 0, 1). Angles in degrees.
struct ConeBeamGeometry {
  double sid_mm = 160.0;
  double sdd_mm = 400.0;
  std::size_t det_rows = 240;
  std::size_t det_cols = 310;
  double det_pixel_mm = 1.232;
  std::vector<double> angles_deg;

  std::size_t n_views() const { return angles_deg.size(); }
  double magnification() const { return sdd_mm / sid_mm; }

  void validate() const {
    if (!(sid_mm > 0) || !(sdd_mm > sid_mm))
      throw std::invalid_argument("geometry: need 0 < sid_mm < sdd_mm");
    if (det_rows < 1 || det_cols < 1) throw std::invalid_argument("geometry: empty detector");
    if (!(det_pixel_mm > 0)) throw std::invalid_argument("geometry: pixel pitch must be positive");
    for (std::size_t i = 0; i < angles_deg.size(); ++i) {
      const double a = angles_deg[i];
      if (!(a >= 0.0 && a < 360.0))
        throw std::invalid_argument("geometry: angle " + std::to_string(a) + " outside [0, 360)");
      if (i > 0 && !(a > angles_deg[i - 1]))
        throw std::invalid_argument("geometry: angles must be strictly increasing");
    }
  }

  /// Pixel-centre offsets from the principal point, in detector mm.
  double u_offset(double col) const {
    return (col - (static_cast<double>(det_cols) - 1.0) / 2.0) * det_pixel_mm;
  }
  double v_offset(double row) const {
    return (row - (static_cast<double>(det_rows) - 1.0) / 2.0) * det_pixel_mm;
  }
};

/// The geometry stated for the 128 mm lung volumes: 310x240 px, 1.232 mm pitch,
/// SID 160 mm, SDD 400 mm. Angles are left empty.
inline ConeBeamGeometry reference_geometry() { return ConeBeamGeometry{}; }

/// Isotropic voxel grid centred on the isocenter. Voxel (i,j,k) has its
/// centre at ((i-(nx-1)/2) * voxel_mm, ...); data is x fastest, then y, then z.
struct VolumeGrid {
  std::size_t nx = 32, ny = 32, nz = 32;
  double voxel_mm = 4.0;

  std::size_t size() const { return nx * ny * nz; }
  void validate() const {
    if (nx < 1 || ny < 1 || nz < 1) throw std::invalid_argument("grid: empty volume");
    if (!(voxel_mm > 0)) throw std::invalid_argument("grid: voxel size must be positive");
  }
  std::array<double, 3> extent_mm() const {
    return {static_cast<double>(nx) * voxel_mm, static_cast<double>(ny) * voxel_mm,
            static_cast<double>(nz) * voxel_mm};
  }
  Vec3 center(std::size_t i, std::size_t j, std::size_t k) const {
    return {(static_cast<double>(i) - (static_cast<double>(nx) - 1.0) / 2.0) * voxel_mm,
            (static_cast<double>(j) - (static_cast<double>(ny) - 1.0) / 2.0) * voxel_mm,
            (static_cast<double>(k) - (static_cast<double>(nz) - 1.0) / 2.0) * voxel_mm};
  }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (k * ny + j) * nx + i;
  }
  bool operator==(const VolumeGrid&) const = default;
};

/// i * 360 / n degrees for i in [0, n).
inline std::vector<double> equiangular_angles(std::size_t n_views) {
  if (n_views == 0) throw std::invalid_argument("equiangular_angles: n_views must be >= 1");
  std::vector<double> out(n_views);
  for (std::size_t i = 0; i < n_views; ++i)
    out[i] = static_cast<double>(i) * 360.0 / static_cast<double>(n_views);
  return out;
}

/// Keeps indices 0, factor, 2*factor, ...
template <typename V>
std::vector<V> sparse_subsample(const std::vector<V>& items, long long factor) {
  if (factor <= 0) throw std::invalid_argument("sparse_subsample: factor must be >= 1");
  std::vector<V> out;
  for (std::size_t i = 0; i < items.size(); i += static_cast<std::size_t>(factor))
    out.push_back(items[i]);
  return out;
}

inline ConeBeamGeometry sparse_subsample(const ConeBeamGeometry& geom, long long factor) {
  ConeBeamGeometry out = geom;
  out.angles_deg = sparse_subsample(geom.angles_deg, factor);
  return out;
}

struct ViewPose {
  Vec3 source;
  Vec3 detector_center;
  Vec3 u_axis;
  Vec3 v_axis;
  Vec3 central_dir;  // unit vector from source towards the detector centre

  Vec3 pixel_center(const ConeBeamGeometry& g, double row, double col) const {
    return detector_center + g.u_offset(col) * u_axis + g.v_offset(row) * v_axis;
  }
};

inline ViewPose view_pose(const ConeBeamGeometry& geom, std::size_t view_index) {
  if (view_index >= geom.n_views())
    throw std::out_of_range("view_pose: view " + std::to_string(view_index) + " of " +
                            std::to_string(geom.n_views()));
  const double t = deg2rad(geom.angles_deg[view_index]);
  const double c = std::cos(t), s = std::sin(t);
  const double det_dist = geom.sdd_mm - geom.sid_mm;
  ViewPose p;
  p.source = {geom.sid_mm * c, geom.sid_mm * s, 0.0};
  p.detector_center = {-det_dist * c, -det_dist * s, 0.0};
  p.u_axis = {-s, c, 0.0};
  p.v_axis = {0.0, 0.0, 1.0};
  p.central_dir = {-c, -s, 0.0};
  return p;
}

/// Stable text identity of a scan geometry plus reconstruction grid; two
/// setups are interchangeable for a trained model iff these agree.
inline std::string geometry_fingerprint(const ConeBeamGeometry& g, const VolumeGrid& grid) {
  std::string text;
  auto put = [&](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g;", v);
    text += buf;
  };
  put(g.sid_mm);
  put(g.sdd_mm);
  put(static_cast<double>(g.det_rows));
  put(static_cast<double>(g.det_cols));
  put(g.det_pixel_mm);
  for (double a : g.angles_deg) put(a);
  put(static_cast<double>(grid.nx));
  put(static_cast<double>(grid.ny));
  put(static_cast<double>(grid.nz));
  put(grid.voxel_mm);
  // FNV-1a 64
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace cbct
