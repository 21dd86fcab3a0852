#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "cbct/augment.hpp"
#include "cbct/io.hpp"
#include "cbct/phantom.hpp"
#include "cbct/presets.hpp"
#include "cbct/simulate.hpp"

using namespace cbct;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "cbct_test_datasim";
  fs::create_directories(dir);
  return dir / name;
}

Volume random_volume(VolumeGrid g, std::uint64_t seed) {
  Volume v(g, Unit::hu);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1000.0f, 2000.0f);
  for (auto& x : v.values) x = u(rng);
  return v;
}

// Smooth off-centre Gaussian blob in HU, evaluated in centred index coordinates.
double blob(double x, double y, double z) {
  const double dx = x - 3.0, dy = y + 2.0, dz = z;
  return -1000.0 + 1500.0 * std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * 16.0));
}

Volume blob_volume(const VolumeGrid& g, double rotation_deg) {
  Volume v(g, Unit::hu);
  const double t = deg2rad(rotation_deg);
  for (std::size_t k = 0; k < g.nz; ++k)
    for (std::size_t j = 0; j < g.ny; ++j)
      for (std::size_t i = 0; i < g.nx; ++i) {
        const double x = i - (g.nx - 1) / 2.0, y = j - (g.ny - 1) / 2.0, z = k - (g.nz - 1) / 2.0;
        // Value at q of the rotated object is f(R(-t) q).
        const double sx = std::cos(t) * x + std::sin(t) * y;
        const double sy = -std::sin(t) * x + std::cos(t) * y;
        v.at(i, j, k) = static_cast<float>(blob(sx, sy, z));
      }
  return v;
}

double rmse_of(const Volume& a, const Volume& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = double(a.values[i]) - b.values[i];
    s += d * d;
  }
  return std::sqrt(s / a.values.size());
}

}  // namespace

TEST(Units, HuToMuFixedPoints) {
  Volume v(VolumeGrid{3, 1, 1, 1.0}, Unit::hu);
  v.values = {0.0f, -1000.0f, 1000.0f};
  auto mu = hu_to_mu(v);
  EXPECT_EQ(mu.unit, Unit::mu_per_mm);
  EXPECT_NEAR(mu.values[0], 0.02, 1e-9);
  EXPECT_EQ(mu.values[1], 0.0f);
  EXPECT_NEAR(mu.values[2], 0.04, 1e-9);
  v.values = {-1200.0f, 0.0f, 0.0f};
  EXPECT_EQ(hu_to_mu(v).values[0], 0.0f);
  EXPECT_THROW(hu_to_mu(mu), std::invalid_argument);
  auto back = mu_to_hu(hu_to_mu(Volume(VolumeGrid{1, 1, 1, 1.0}, Unit::hu, 500.0f)));
  EXPECT_NEAR(back.values[0], 500.0f, 1e-3);
}

TEST(Units, NormalizeEndpointsAndInverse) {
  Volume v(VolumeGrid{5, 1, 1, 1.0}, Unit::hu);
  v.values = {-1000.0f, 2000.0f, 500.0f, -1500.0f, 2500.0f};
  auto n = normalize_hu(v);
  EXPECT_EQ(n.unit, Unit::normalized);
  EXPECT_EQ(n.values[0], 0.0f);
  EXPECT_EQ(n.values[1], 1.0f);
  EXPECT_EQ(n.values[2], 0.5f);
  EXPECT_EQ(n.values[3], 0.0f);
  EXPECT_EQ(n.values[4], 1.0f);
  auto back = denormalize(n);
  auto clamped = clamp_hu(v);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(back.values[i], clamped.values[i]) << i;
  EXPECT_THROW(normalize_hu(n), std::invalid_argument);
  EXPECT_THROW(denormalize(v), std::invalid_argument);
}

TEST(Units, NormalizeRoundTripOnRandomValues) {
  auto v = random_volume(VolumeGrid{10, 10, 10, 1.0}, 5);
  auto back = denormalize(normalize_hu(v));
  for (std::size_t i = 0; i < v.values.size(); ++i) EXPECT_NEAR(back.values[i], v.values[i], 1e-3);
  EXPECT_NEAR(kNormToMu * normalize_hu_value(0.0), kMuWater, 1e-15);
}

TEST(Phantom, DeterministicAndSeedDependent) {
  VolumeGrid g{24, 24, 24, 5.0};
  auto a = generate_phantom(3, g), b = generate_phantom(3, g), c = generate_phantom(4, g);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
}

TEST(Phantom, SpecStructure) {
  VolumeGrid g = desk_setup().grid;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto spec = draw_phantom_spec(seed, g);
    int body = 0, soft = 0, lung = 0, bone = 0;
    for (const auto& e : spec.ellipsoids) {
      switch (e.tissue) {
        case TissueClass::body: ++body; EXPECT_NEAR(e.hu, 40.0, 20.0); break;
        case TissueClass::soft: ++soft; EXPECT_GE(e.hu, -100.0); EXPECT_LE(e.hu, 100.0); break;
        case TissueClass::lung: ++lung; EXPECT_NEAR(e.hu, -800.0, 30.0); break;
        case TissueClass::bone: ++bone; EXPECT_GE(e.hu, 400.0); EXPECT_LE(e.hu, 1500.0); break;
      }
      // Inside the grid: the bounding box of the ellipsoid fits in the volume.
      const double half = g.extent_mm()[0] / 2.0;
      const double r = std::max(e.semi_axes_mm[0], e.semi_axes_mm[1]);
      EXPECT_LE(std::abs(e.center_mm[0]) + r, half + 1e-9) << seed;
      EXPECT_LE(std::abs(e.center_mm[1]) + r, half + 1e-9) << seed;
      EXPECT_LE(std::abs(e.center_mm[2]) + e.semi_axes_mm[2], half + 1e-9) << seed;
    }
    EXPECT_EQ(body, 1);
    EXPECT_GE(soft, 3);
    EXPECT_LE(soft, 8);
    EXPECT_EQ(lung, 2);
    EXPECT_GE(bone, 1);
    EXPECT_LE(bone, 4);
    EXPECT_EQ(spec.background_hu, -1000.0);
  }
}

TEST(Phantom, RasterContainsBoneAndLung) {
  VolumeGrid g = desk_setup().grid;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto v = generate_phantom(seed, g);
    bool has_bone = false, has_lung = false, has_air = false;
    for (float x : v.values) {
      has_bone |= x >= 400 && x <= 1500;
      has_lung |= x >= -830 && x <= -770;
      has_air |= x == -1000.0f;
      EXPECT_GE(x, -1000.0f);
      EXPECT_LE(x, 2000.0f);
    }
    EXPECT_TRUE(has_bone) << seed;
    EXPECT_TRUE(has_lung) << seed;
    EXPECT_TRUE(has_air) << seed;
  }
}

TEST(Phantom, LaterEllipsoidsOverwrite) {
  VolumeGrid g{8, 8, 8, 1.0};
  PhantomSpec spec;
  spec.ellipsoids.push_back({TissueClass::body, {0, 0, 0}, {10, 10, 10}, 0, 40});
  spec.ellipsoids.push_back({TissueClass::bone, {0, 0, 0}, {1, 1, 1}, 0, 1000});
  auto v = rasterize(spec, g);
  EXPECT_EQ(v.at(4, 4, 4), 1000.0f);  // centre (0.5, 0.5, 0.5) lies inside the bone
  EXPECT_EQ(v.at(0, 0, 0), 40.0f);
}

TEST(Augment, DisabledIsIdentity) {
  auto v = generate_phantom(1, VolumeGrid{16, 16, 16, 8.0});
  AugmentConfig cfg;
  cfg.enabled = false;
  EXPECT_EQ(augment(v, 123, cfg).values, v.values);
}

TEST(Augment, FlipTwiceIsIdentity) {
  auto v = random_volume(VolumeGrid{7, 6, 5, 1.0}, 9);
  for (int mask = 0; mask < 8; ++mask) {
    AugmentParams p;
    p.flip = {bool(mask & 1), bool(mask & 2), bool(mask & 4)};
    auto once = apply_augment(v, p);
    if (mask == 1) {
      EXPECT_EQ(once.at(0, 2, 3), v.at(6, 2, 3));
    }
    EXPECT_EQ(apply_augment(once, p).values, v.values) << mask;
  }
}

TEST(Augment, RotateBackDegradesLikeInterpolationOnly) {
  VolumeGrid g{24, 24, 24, 1.0};
  auto v = blob_volume(g, 0.0);
  AugmentConfig cfg;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto params = sample_augment(seed, cfg);
    AugmentParams rot, back;
    rot.rotation_deg = params.rotation_deg;
    back.rotation_deg = -params.rotation_deg;
    auto once = apply_augment(v, rot);
    const double single = rmse_of(once, blob_volume(g, params.rotation_deg));
    auto twice = apply_augment(once, back);
    EXPECT_LT(rmse_of(twice, v), 2.0 * single + 1e-3) << params.rotation_deg;
  }
}

TEST(Augment, SampledParametersInRange) {
  AugmentConfig cfg;
  int flips = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    auto p = sample_augment(seed, cfg);
    EXPECT_LE(std::abs(p.rotation_deg), 15.0);
    EXPECT_GE(p.scale, 0.9);
    EXPECT_LE(p.scale, 1.1);
    flips += p.flip[0] + p.flip[1] + p.flip[2];
  }
  EXPECT_NEAR(flips / 1500.0, 0.5, 0.06);
  auto a = sample_augment(77, cfg), b = sample_augment(77, cfg);
  EXPECT_EQ(a.rotation_deg, b.rotation_deg);
  EXPECT_EQ(a.scale, b.scale);
}

TEST(Augment, ScalingAboutCentreKeepsCentre) {
  VolumeGrid g{9, 9, 9, 1.0};
  auto v = blob_volume(g, 0.0);
  AugmentParams p;
  p.scale = 1.1;
  auto s = apply_augment(v, p);
  EXPECT_EQ(s.at(4, 4, 4), v.at(4, 4, 4));
}

TEST(Simulate, ViewCounts) {
  VolumeGrid g{8, 8, 8, 16.0};
  auto v = generate_phantom(2, g);
  ConeBeamGeometry full;
  full.det_cols = 6;
  full.det_rows = 5;
  full.det_pixel_mm = 60.0;
  full.angles_deg = equiangular_angles(360);
  EXPECT_EQ(simulate_scan(v, full, 16).projections.geometry.n_views(), 23u);
  EXPECT_EQ(simulate_scan(v, full, 8).projections.geometry.n_views(), 45u);
  auto s1 = simulate_scan(v, full, 1);
  EXPECT_EQ(s1.projections.geometry.n_views(), 360u);
  EXPECT_EQ(s1.ground_truth.values, v.values);
}

TEST(Simulate, EqualsSubsampledFullProjection) {
  auto setup = desk_setup();
  setup.grid = VolumeGrid{16, 16, 16, 8.0};
  auto v = generate_phantom(5, setup.grid);
  auto full = forward_project<float>(hu_to_mu(v).values, setup.grid, setup.geometry);
  auto sparse = simulate_scan(v, setup.geometry, 8);
  const std::size_t per_view = setup.geometry.det_rows * setup.geometry.det_cols;
  ASSERT_EQ(sparse.projections.geometry.n_views(), 12u);
  for (std::size_t s = 0; s < 12; ++s)
    for (std::size_t p = 0; p < per_view; ++p)
      ASSERT_EQ(sparse.projections.data[s * per_view + p], full.data[s * 8 * per_view + p]);
  EXPECT_THROW(simulate_scan(hu_to_mu(v), setup.geometry, 8), std::invalid_argument);
}

TEST(FileIo, VolumeRoundTripIsBitExact) {
  auto v = random_volume(VolumeGrid{5, 4, 3, 2.5}, 1);
  v.values[7] = -0.0f;
  const auto path = temp_path("v.cbv").string();
  save_volume(path, v);
  auto r = load_volume(path);
  EXPECT_EQ(r.grid, v.grid);
  EXPECT_EQ(r.unit, v.unit);
  ASSERT_EQ(r.values.size(), v.values.size());
  EXPECT_EQ(std::memcmp(r.values.data(), v.values.data(), v.values.size() * 4), 0);
}

TEST(FileIo, ProjectionRoundTripIsBitExact) {
  ProjectionStack<float> p;
  p.geometry = adjoint_setup("small").geometry;
  p.data.resize(p.expected_size());
  std::mt19937 rng(3);
  for (auto& x : p.data) x = std::uniform_real_distribution<float>(0, 5)(rng);
  const auto path = temp_path("p.cbp").string();
  save_projections(path, p);
  auto r = load_projections(path);
  EXPECT_EQ(r.data, p.data);
  EXPECT_EQ(r.geometry.det_cols, p.geometry.det_cols);
  EXPECT_EQ(r.geometry.det_rows, p.geometry.det_rows);
  EXPECT_EQ(r.geometry.angles_deg, p.geometry.angles_deg);
  EXPECT_EQ(static_cast<float>(r.geometry.det_pixel_mm), static_cast<float>(p.geometry.det_pixel_mm));
}

namespace {

IoErrc load_error(const std::string& path) {
  try {
    load_volume(path);
  } catch (const IoError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return IoErrc::open_failed;
}

void patch(const std::string& path, std::size_t offset, const void* bytes, std::size_t n) {
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
}

}  // namespace

TEST(FileIo, DistinctErrors) {
  auto v = random_volume(VolumeGrid{4, 4, 4, 1.0}, 2);
  const auto path = temp_path("bad.cbv").string();

  EXPECT_EQ(load_error(temp_path("does_not_exist.cbv").string()), IoErrc::open_failed);

  save_volume(path, v);
  patch(path, 0, "XBV1", 4);
  EXPECT_EQ(load_error(path), IoErrc::bad_magic);

  save_volume(path, v);
  std::uint32_t zero = 0;
  patch(path, 8, &zero, 4);
  EXPECT_EQ(load_error(path), IoErrc::invalid_dimensions);

  save_volume(path, v);
  std::uint32_t huge = 0xFFFFFFFFu;
  patch(path, 8, &huge, 4);
  patch(path, 12, &huge, 4);
  EXPECT_EQ(load_error(path), IoErrc::invalid_dimensions);

  save_volume(path, v);
  std::uint32_t version = 9;
  patch(path, 4, &version, 4);
  EXPECT_EQ(load_error(path), IoErrc::unsupported_version);

  save_volume(path, v);
  fs::resize_file(path, fs::file_size(path) - 4);
  EXPECT_EQ(load_error(path), IoErrc::truncated);

  save_volume(path, v);
  std::uint32_t unit = 7;
  patch(path, 24, &unit, 4);
  EXPECT_EQ(load_error(path), IoErrc::invalid_value);
}

TEST(FileIo, ProjectionHeaderValidation) {
  ProjectionStack<float> p;
  p.geometry = adjoint_setup("small").geometry;
  p.data.assign(p.expected_size(), 1.0f);
  const auto path = temp_path("bad.cbp").string();
  save_projections(path, p);
  float bad_sdd = 10.0f;  // below SID
  patch(path, 28, &bad_sdd, 4);
  try {
    load_projections(path);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_EQ(e.code(), IoErrc::invalid_value);
  }
}
