#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "cbct/volume.hpp"

namespace cbct {

enum class TissueClass { body, soft, lung, bone };

struct Ellipsoid {
  TissueClass tissue;
  Vec3 center_mm;
  Vec3 semi_axes_mm;
  double angle_deg;  // rotation about z
  double hu;

  bool contains(const Vec3& p) const {
    const double t = deg2rad(angle_deg);
    const double dx = p[0] - center_mm[0], dy = p[1] - center_mm[1], dz = p[2] - center_mm[2];
    const double x = std::cos(t) * dx + std::sin(t) * dy;
    const double y = -std::sin(t) * dx + std::cos(t) * dy;
    const double a = x / semi_axes_mm[0], b = y / semi_axes_mm[1], c = dz / semi_axes_mm[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

/// Thorax-like stand-in object: a soft-tissue body, a few soft inclusions,
/// two lungs and 1-4 bones on an air background. Later ellipsoids overwrite
/// earlier ones.
struct PhantomSpec {
  std::uint64_t seed = 0;
  double background_hu = -1000.0;
  std::vector<Ellipsoid> ellipsoids;
};

inline PhantomSpec draw_phantom_spec(std::uint64_t seed, const VolumeGrid& grid) {
  grid.validate();
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const auto ext = grid.extent_mm();
  const double L = std::min({ext[0], ext[1], ext[2]});
  // Every ellipsoid contains at least one voxel centre if its smallest
  // semi-axis exceeds half the voxel diagonal.
  const double min_axis = 0.9 * grid.voxel_mm;
  auto axis = [&](double lo, double hi) { return std::max(min_axis, uni(lo, hi) * L); };

  PhantomSpec spec;
  spec.seed = seed;

  const Vec3 body_axes{uni(0.36, 0.44) * L, uni(0.28, 0.36) * L, uni(0.40, 0.46) * L};
  const Vec3 body_center{uni(-0.03, 0.03) * L, uni(-0.03, 0.03) * L, 0.0};
  spec.ellipsoids.push_back(
      {TissueClass::body, body_center, body_axes, uni(-10.0, 10.0), uni(20.0, 60.0)});

  const int n_soft = std::uniform_int_distribution<int>(3, 8)(rng);
  for (int i = 0; i < n_soft; ++i) {
    const Vec3 c{body_center[0] + uni(-0.6, 0.6) * body_axes[0],
                 body_center[1] + uni(-0.6, 0.6) * body_axes[1], uni(-0.6, 0.6) * body_axes[2]};
    spec.ellipsoids.push_back({TissueClass::soft, c,
                               {axis(0.04, 0.10), axis(0.04, 0.10), axis(0.04, 0.10)},
                               uni(0.0, 180.0), uni(-100.0, 100.0)});
  }

  for (int side : {-1, 1}) {
    const Vec3 c{body_center[0] + side * uni(0.15, 0.19) * L,
                 body_center[1] + uni(-0.03, 0.05) * L, uni(-0.04, 0.04) * L};
    spec.ellipsoids.push_back({TissueClass::lung, c,
                               {axis(0.10, 0.13), axis(0.15, 0.20), axis(0.25, 0.32)},
                               uni(-8.0, 8.0), uni(-830.0, -770.0)});
  }

  // Spine behind the lungs, then up to three rib-like bones near the body wall.
  const int n_bone = std::uniform_int_distribution<int>(1, 4)(rng);
  spec.ellipsoids.push_back({TissueClass::bone,
                             {body_center[0], body_center[1] - 0.72 * body_axes[1], 0.0},
                             {axis(0.035, 0.05), axis(0.035, 0.05), axis(0.38, 0.42)},
                             0.0, uni(400.0, 1500.0)});
  for (int i = 1; i < n_bone; ++i) {
    const double phi = uni(0.0, 2.0 * std::numbers::pi);
    const Vec3 c{body_center[0] + 0.88 * body_axes[0] * std::cos(phi),
                 body_center[1] + 0.88 * body_axes[1] * std::sin(phi), uni(-0.3, 0.3) * L};
    spec.ellipsoids.push_back({TissueClass::bone, c,
                               {axis(0.02, 0.04), axis(0.02, 0.04), axis(0.05, 0.15)},
                               uni(0.0, 180.0), uni(400.0, 1500.0)});
  }
  return spec;
}

inline Volume rasterize(const PhantomSpec& spec, const VolumeGrid& grid) {
  Volume v(grid, Unit::hu, static_cast<float>(spec.background_hu));
  for (std::size_t k = 0; k < grid.nz; ++k)
    for (std::size_t j = 0; j < grid.ny; ++j)
      for (std::size_t i = 0; i < grid.nx; ++i) {
        const Vec3 p = grid.center(i, j, k);
        for (const auto& e : spec.ellipsoids)
          if (e.contains(p)) v.at(i, j, k) = static_cast<float>(e.hu);
      }
  return v;
}

/// Deterministic function of (seed, grid).
inline Volume generate_phantom(std::uint64_t seed, const VolumeGrid& grid) {
  return rasterize(draw_phantom_spec(seed, grid), grid);
}

}  // namespace cbct
