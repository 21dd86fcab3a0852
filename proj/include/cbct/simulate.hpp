#pragma once

#include <stdexcept>

#include "cbct/projector.hpp"
#include "cbct/volume.hpp"

namespace cbct {

struct SimulatedScan {
  ProjectionStack<float> projections;  // retained views only
  Volume ground_truth;                 // HU
};

/// Noise-free sparse-view scan of a HU volume: line integrals of hu_to_mu(v)
/// for every `sparse_factor`-th view of `full_geometry`.
///
/// Only the retained views are traced; each pixel's ray is independent of the
/// others, so this equals projecting all views and then subsampling.
inline SimulatedScan simulate_scan(const Volume& v, const ConeBeamGeometry& full_geometry,
                                   long long sparse_factor) {
  require_unit(v, Unit::hu, "simulate_scan");
  const ConeBeamGeometry sparse = sparse_subsample(full_geometry, sparse_factor);
  const Volume mu = hu_to_mu(v);
  SimulatedScan out{forward_project<float>(mu.values, v.grid, sparse), v};
  return out;
}

}  // namespace cbct
