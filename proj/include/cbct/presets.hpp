#pragma once

#include <stdexcept>
#include <string>

#include "cbct/geometry.hpp"

namespace cbct {

struct ScanSetup {
  ConeBeamGeometry geometry;  // full (non-subsampled) angle set
  VolumeGrid grid;
};

/// 32^3 grid at 4 mm, 78x60 detector at 4.928 mm, 90 views; SID/SDD as in
/// reference_geometry().
inline ScanSetup desk_setup() {
  ScanSetup s;
  s.geometry.det_cols = 78;
  s.geometry.det_rows = 60;
  s.geometry.det_pixel_mm = 4.928;
  s.geometry.angles_deg = equiangular_angles(90);
  s.grid = VolumeGrid{32, 32, 32, 4.0};
  return s;
}

/// Small setups for the dot-product tests.
///   "default": 16^3 grid at 8 mm, 12x10 detector, 8 views.
///   "small":   8^3 grid at 16 mm, 6x5 detector, 4 views.
/// Both cover the 128 mm cube with the reference SID/SDD.
inline ScanSetup adjoint_setup(const std::string& preset) {
  ScanSetup s;
  std::size_t n = 0, cols = 0, rows = 0, views = 0;
  if (preset == "default") {
    n = 16, cols = 12, rows = 10, views = 8;
  } else if (preset == "small") {
    n = 8, cols = 6, rows = 5, views = 4;
  } else {
    throw std::invalid_argument("unknown preset '" + preset + "' (expected small or default)");
  }
  s.grid = VolumeGrid{n, n, n, 128.0 / static_cast<double>(n)};
  s.geometry.det_cols = cols;
  s.geometry.det_rows = rows;
  // 310 * 1.232 mm spread over `cols` pixels.
  s.geometry.det_pixel_mm = 310.0 * 1.232 / static_cast<double>(cols);
  s.geometry.angles_deg = equiangular_angles(views);
  return s;
}

}  // namespace cbct
