#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>

#include "cbct/volume.hpp"

namespace cbct {

struct AugmentConfig {
  bool enabled = true;
  double flip_probability = 0.5;  // per axis
  double max_rotation_deg = 15.0;  // about z, uniform in [-max, max]
  double scale_min = 0.9;
  double scale_max = 1.1;
};

struct AugmentParams {
  std::array<bool, 3> flip{false, false, false};
  double rotation_deg = 0.0;
  double scale = 1.0;
};

inline AugmentParams sample_augment(std::uint64_t seed, const AugmentConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AugmentParams p;
  for (auto& f : p.flip) f = u01(rng) < cfg.flip_probability;
  p.rotation_deg = cfg.max_rotation_deg * (2.0 * u01(rng) - 1.0);
  p.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * u01(rng);
  return p;
}

/// Resamples `v` under x -> scale * R(rotation) * flip(x) (about the grid
/// centre) with trilinear interpolation; samples beyond the grid read -1000 HU.
/// Pure flips are exact permutations of the voxels.
inline Volume apply_augment(const Volume& v, const AugmentParams& p) {
  require_unit(v, Unit::hu, "augment");
  const VolumeGrid& g = v.grid;
  const std::array<std::size_t, 3> n{g.nx, g.ny, g.nz};
  const std::array<double, 3> c{(g.nx - 1.0) / 2.0, (g.ny - 1.0) / 2.0, (g.nz - 1.0) / 2.0};
  const double t = deg2rad(p.rotation_deg);
  const double cs = std::cos(t), sn = std::sin(t);
  const float air = static_cast<float>(kHuMin);

  auto fetch = [&](long long i, long long j, long long k) -> float {
    if (i < 0 || j < 0 || k < 0 || i >= static_cast<long long>(n[0]) ||
        j >= static_cast<long long>(n[1]) || k >= static_cast<long long>(n[2]))
      return air;
    return v.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k));
  };

  Volume out(g, Unit::hu);
  for (std::size_t k = 0; k < g.nz; ++k)
    for (std::size_t j = 0; j < g.ny; ++j)
      for (std::size_t i = 0; i < g.nx; ++i) {
        // Inverse map in centred index coordinates: flip * R(-t) * (q / s).
        const double qx = (static_cast<double>(i) - c[0]) / p.scale;
        const double qy = (static_cast<double>(j) - c[1]) / p.scale;
        const double qz = (static_cast<double>(k) - c[2]) / p.scale;
        std::array<double, 3> src{cs * qx + sn * qy, -sn * qx + cs * qy, qz};
        for (int a = 0; a < 3; ++a) {
          if (p.flip[a]) src[a] = -src[a];
          src[a] += c[a];
        }
        std::array<long long, 3> i0{};
        std::array<double, 3> w{};
        for (int a = 0; a < 3; ++a) {
          const double fl = std::floor(src[a]);
          i0[a] = static_cast<long long>(fl);
          w[a] = src[a] - fl;
        }
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double wt = (dx ? w[0] : 1 - w[0]) * (dy ? w[1] : 1 - w[1]) *
                                (dz ? w[2] : 1 - w[2]);
              if (wt == 0.0) continue;
              acc += wt * fetch(i0[0] + dx, i0[1] + dy, i0[2] + dz);
            }
        out.at(i, j, k) = static_cast<float>(acc);
      }
  return out;
}

/// Identity (bit-exact copy) when disabled.
inline Volume augment(const Volume& v, std::uint64_t seed, const AugmentConfig& cfg) {
  require_unit(v, Unit::hu, "augment");
  if (!cfg.enabled) return v;
  return apply_augment(v, sample_augment(seed, cfg));
}

}  // namespace cbct
