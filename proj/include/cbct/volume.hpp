#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/geometry.hpp"

namespace cbct {

enum class Unit : std::uint32_t { hu = 0, mu_per_mm = 1, normalized = 2 };

inline const char* unit_name(Unit u) {
  switch (u) {
    case Unit::hu: return "HU";
    case Unit::mu_per_mm: return "mm^-1";
    case Unit::normalized: return "normalized";
  }
  return "?";
}

/// Scalar field on a VolumeGrid, x fastest then y then z.
struct Volume {
  VolumeGrid grid;
  Unit unit = Unit::hu;
  std::vector<float> values;

  Volume() = default;
  Volume(VolumeGrid g, Unit u, float fill = 0.0f) : grid(g), unit(u), values(g.size(), fill) {}

  float& at(std::size_t i, std::size_t j, std::size_t k) { return values[grid.index(i, j, k)]; }
  float at(std::size_t i, std::size_t j, std::size_t k) const { return values[grid.index(i, j, k)]; }
};

/// Linear attenuation of water (about 60-70 keV effective energy).
inline constexpr double kMuWater = 0.02;
inline constexpr double kHuMin = -1000.0;
inline constexpr double kHuMax = 2000.0;
inline constexpr double kHuRange = kHuMax - kHuMin;

/// Normalized intensity n maps to attenuation mu = kNormToMu * n on [-1000, 2000] HU.
inline constexpr double kNormToMu = kMuWater * kHuRange / 1000.0;

inline void require_unit(const Volume& v, Unit u, const char* who) {
  if (v.unit != u)
    throw std::invalid_argument(std::string(who) + ": expected unit " + unit_name(u) + ", got " +
                                unit_name(v.unit));
}

/// mu = mu_water * (1 + HU/1000), clamped at 0.
inline Volume hu_to_mu(const Volume& v) {
  require_unit(v, Unit::hu, "hu_to_mu");
  Volume out(v.grid, Unit::mu_per_mm);
  for (std::size_t i = 0; i < v.values.size(); ++i)
    out.values[i] = static_cast<float>(std::max(0.0, kMuWater * (1.0 + v.values[i] / 1000.0)));
  return out;
}

/// Inverse of hu_to_mu (no clamping).
inline Volume mu_to_hu(const Volume& v) {
  require_unit(v, Unit::mu_per_mm, "mu_to_hu");
  Volume out(v.grid, Unit::hu);
  for (std::size_t i = 0; i < v.values.size(); ++i)
    out.values[i] = static_cast<float>((v.values[i] / kMuWater - 1.0) * 1000.0);
  return out;
}

inline double normalize_hu_value(double hu) {
  return std::clamp((hu - kHuMin) / kHuRange, 0.0, 1.0);
}
inline double denormalize_value(double n) { return n * kHuRange + kHuMin; }

/// n = clamp((HU + 1000) / 3000, 0, 1).
inline Volume normalize_hu(const Volume& v) {
  require_unit(v, Unit::hu, "normalize_hu");
  Volume out(v.grid, Unit::normalized);
  for (std::size_t i = 0; i < v.values.size(); ++i)
    out.values[i] = static_cast<float>(normalize_hu_value(v.values[i]));
  return out;
}

/// HU = n * 3000 - 1000. Values outside [0, 1] are mapped linearly, not clamped,
/// so network outputs keep their error in HU.
inline Volume denormalize(const Volume& v) {
  require_unit(v, Unit::normalized, "denormalize");
  Volume out(v.grid, Unit::hu);
  for (std::size_t i = 0; i < v.values.size(); ++i)
    out.values[i] = static_cast<float>(denormalize_value(v.values[i]));
  return out;
}

inline Volume clamp_hu(const Volume& v) {
  require_unit(v, Unit::hu, "clamp_hu");
  Volume out = v;
  for (auto& x : out.values) x = std::clamp(x, static_cast<float>(kHuMin), static_cast<float>(kHuMax));
  return out;
}

}  // namespace cbct
