#pragma once

// Closed-form objects used as test oracles.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cbct/geometry.hpp"

namespace cbct::testing {

/// Length of the segment a->b inside the axis-aligned box [-h, h]^3 (slab method).
inline double box_chord(const Vec3& a, const Vec3& b, double h) {
  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double d = b[k] - a[k];
    if (d == 0.0) {
      if (a[k] < -h || a[k] > h) return 0.0;
      continue;
    }
    double lo = (-h - a[k]) / d, hi = (h - a[k]) / d;
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  return t1 > t0 ? (t1 - t0) * norm(b - a) : 0.0;
}

/// Chord of the infinite line through a and b across the origin-centred sphere.
inline double sphere_chord(const Vec3& a, const Vec3& b, double r) {
  const Vec3 d = (1.0 / norm(b - a)) * (b - a);
  const double along = dot(a, d);
  const double dist2 = dot(a, a) - along * along;
  return dist2 < r * r ? 2.0 * std::sqrt(r * r - dist2) : 0.0;
}

/// Distance from the origin to the line through a and b.
inline double line_distance(const Vec3& a, const Vec3& b) {
  const Vec3 d = (1.0 / norm(b - a)) * (b - a);
  const double along = dot(a, d);
  return std::sqrt(std::max(0.0, dot(a, a) - along * along));
}

/// Uniform sphere of radius r and value mu, voxel values = covered fraction
/// (sub x sub x sub supersampling) times mu.
template <typename T>
std::vector<T> sphere_volume(const VolumeGrid& g, double r, double mu, int sub = 4) {
  std::vector<T> v(g.size());
  for (std::size_t k = 0; k < g.nz; ++k)
    for (std::size_t j = 0; j < g.ny; ++j)
      for (std::size_t i = 0; i < g.nx; ++i) {
        const Vec3 c = g.center(i, j, k);
        int inside = 0;
        for (int a = 0; a < sub; ++a)
          for (int b = 0; b < sub; ++b)
            for (int e = 0; e < sub; ++e) {
              const double x = c[0] + ((a + 0.5) / sub - 0.5) * g.voxel_mm;
              const double y = c[1] + ((b + 0.5) / sub - 0.5) * g.voxel_mm;
              const double z = c[2] + ((e + 0.5) / sub - 0.5) * g.voxel_mm;
              if (x * x + y * y + z * z <= r * r) ++inside;
            }
        v[g.index(i, j, k)] = static_cast<T>(mu * inside / double(sub * sub * sub));
      }
  return v;
}

}  // namespace cbct::testing
