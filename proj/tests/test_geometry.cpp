#include <gtest/gtest.h>

#include <cmath>

#include "cbct/geometry.hpp"

using namespace cbct;

TEST(EquiangularAngles, Values) {
  auto a360 = equiangular_angles(360);
  ASSERT_EQ(a360.size(), 360u);
  for (std::size_t i = 0; i < 360; ++i) EXPECT_EQ(a360[i], static_cast<double>(i));
  EXPECT_EQ(equiangular_angles(1), std::vector<double>{0.0});
  EXPECT_EQ(equiangular_angles(4), (std::vector<double>{0, 90, 180, 270}));
  EXPECT_THROW(equiangular_angles(0), std::invalid_argument);
}

TEST(SparseSubsample, CountsAndIndices) {
  auto full = equiangular_angles(360);
  auto s16 = sparse_subsample(full, 16);
  ASSERT_EQ(s16.size(), 23u);
  for (std::size_t i = 0; i < s16.size(); ++i) EXPECT_EQ(s16[i], 16.0 * i);
  EXPECT_EQ(s16.back(), 352.0);
  EXPECT_EQ(sparse_subsample(full, 8).size(), 45u);
  EXPECT_EQ(sparse_subsample(full, 1), full);
  EXPECT_THROW(sparse_subsample(full, 0), std::invalid_argument);
  EXPECT_THROW(sparse_subsample(full, -3), std::invalid_argument);
  for (std::size_t n : {1u, 7u, 90u, 100u})
    for (long long f : {1, 2, 3, 8, 16})
      EXPECT_EQ(sparse_subsample(equiangular_angles(n), f).size(),
                (n + static_cast<std::size_t>(f) - 1) / static_cast<std::size_t>(f));
}

TEST(Geometry, Validation) {
  ConeBeamGeometry g = reference_geometry();
  g.angles_deg = {0, 10, 20};
  EXPECT_NO_THROW(g.validate());
  auto bad = g;
  bad.sdd_mm = 100;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = g;
  bad.angles_deg = {0, 20, 10};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = g;
  bad.angles_deg = {360};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = g;
  bad.det_pixel_mm = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ViewPose, ReferenceGeometryPoses) {
  ConeBeamGeometry g = reference_geometry();
  g.angles_deg = {0.0, 90.0};
  auto p0 = view_pose(g, 0);
  EXPECT_NEAR(p0.source[0], 160.0, 1e-12);
  EXPECT_NEAR(p0.source[1], 0.0, 1e-12);
  EXPECT_NEAR(p0.detector_center[0], -240.0, 1e-12);
  EXPECT_NEAR(p0.detector_center[1], 0.0, 1e-12);
  auto p1 = view_pose(g, 1);
  EXPECT_NEAR(p1.source[0], 0.0, 1e-12);
  EXPECT_NEAR(p1.source[1], 160.0, 1e-12);
  EXPECT_NEAR(p1.detector_center[0], 0.0, 1e-12);
  EXPECT_NEAR(p1.detector_center[1], -240.0, 1e-12);
  EXPECT_THROW(view_pose(g, 2), std::out_of_range);
}

TEST(ViewPose, SourceDetectorDistanceIsSdd) {
  ConeBeamGeometry g = reference_geometry();
  g.angles_deg = equiangular_angles(360);
  for (std::size_t v = 0; v < g.n_views(); ++v) {
    auto p = view_pose(g, v);
    EXPECT_NEAR(norm(p.source - p.detector_center), g.sdd_mm, 1e-9 * g.sdd_mm);
    EXPECT_NEAR(dot(p.u_axis, p.central_dir), 0.0, 1e-15);
  }
}

TEST(ViewPose, PixelCentreConvention) {
  ConeBeamGeometry g = reference_geometry();
  g.angles_deg = {0.0};
  auto p = view_pose(g, 0);
  // Column 0 sits at u = -(cols-1)/2 pitch along (-sin, cos, 0) = (0, 1, 0).
  auto px = p.pixel_center(g, 0, 0);
  EXPECT_NEAR(px[1], -(309.0 / 2) * 1.232, 1e-9);
  EXPECT_NEAR(px[2], -(239.0 / 2) * 1.232, 1e-9);
}

TEST(ReferenceGeometry, MagnificationAndCoverage) {
  const auto g = reference_geometry();
  EXPECT_EQ(g.sid_mm, 160.0);
  EXPECT_EQ(g.sdd_mm, 400.0);
  EXPECT_EQ(g.det_cols, 310u);
  EXPECT_EQ(g.det_rows, 240u);
  EXPECT_EQ(g.det_pixel_mm, 1.232);
  EXPECT_DOUBLE_EQ(g.magnification(), 2.5);
  const double iso_width = g.det_cols * g.det_pixel_mm * g.sid_mm / g.sdd_mm;
  EXPECT_NEAR(iso_width, 152.768, 1e-9);
  EXPECT_GT(iso_width, 128.0);  // the 128 mm cube fits transaxially
}

TEST(VolumeGrid, CentresAndIndex) {
  VolumeGrid g{4, 3, 2, 2.0};
  EXPECT_EQ(g.size(), 24u);
  auto c = g.center(0, 0, 0);
  EXPECT_DOUBLE_EQ(c[0], -3.0);
  EXPECT_DOUBLE_EQ(c[1], -2.0);
  EXPECT_DOUBLE_EQ(c[2], -1.0);
  EXPECT_EQ(g.index(1, 2, 1), (1u * 3 + 2) * 4 + 1);
  EXPECT_EQ(g.extent_mm()[0], 8.0);
  EXPECT_THROW((VolumeGrid{0, 1, 1, 1.0}).validate(), std::invalid_argument);
}

TEST(Fingerprint, SensitiveToGeometryAndGrid) {
  ConeBeamGeometry g = reference_geometry();
  g.angles_deg = equiangular_angles(23);
  VolumeGrid grid{32, 32, 32, 4.0};
  const auto f = geometry_fingerprint(g, grid);
  EXPECT_EQ(f, geometry_fingerprint(g, grid));
  auto g2 = g;
  g2.angles_deg.pop_back();
  EXPECT_NE(f, geometry_fingerprint(g2, grid));
  EXPECT_NE(f, geometry_fingerprint(g, VolumeGrid{32, 32, 32, 2.0}));
}
