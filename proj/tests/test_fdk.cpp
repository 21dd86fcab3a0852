#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "analytic.hpp"
#include "cbct/fdk.hpp"
#include "cbct/presets.hpp"
#include "gradcheck.hpp"

using namespace cbct;

TEST(CosineWeight, CornerPixelOfReferenceDetector) {
  ConeBeamGeometry g = reference_geometry();
  g.angles_deg = {0.0};
  std::vector<double> ones(g.det_rows * g.det_cols, 1.0);
  cosine_weight<double>(ones, g);
  const double u = 154.5 * 1.232, v = 119.5 * 1.232;
  const double oracle = 400.0 / std::sqrt(400.0 * 400.0 + u * u + v * v);
  EXPECT_NEAR(ones[0], oracle, 1e-12);
  EXPECT_NEAR(ones.back(), oracle, 1e-12);
  EXPECT_NEAR(ones[0], 0.856, 2e-3);
  // Centre of an even detector sits between pixels: max weight just below 1.
  double mx = 0;
  for (double w : ones) mx = std::max(mx, w);
  EXPECT_LT(mx, 1.0);
  EXPECT_GT(mx, 0.99999);
}

TEST(RampFilter, PaddedLength) {
  EXPECT_EQ(RampFilter(310, 1.0).padded_length(), 1024u);
  EXPECT_EQ(RampFilter(78, 1.0).padded_length(), 256u);
  EXPECT_EQ(RampFilter(64, 1.0).padded_length(), 128u);
  EXPECT_THROW(RampFilter(0, 1.0), std::invalid_argument);
  EXPECT_THROW(RampFilter(4, 0.0), std::invalid_argument);
}

TEST(RampFilter, ImpulseResponseMatchesSpatialKernel) {
  const double du = 0.7;
  const std::size_t cols = 101, centre = 50;
  RampFilter f(cols, du);
  std::vector<double> row(cols, 0.0);
  row[centre] = 1.0;
  f.apply_rows<double>(row);
  const double peak = 1.0 / (4 * du * du) * du;
  for (std::size_t i = 0; i < cols; ++i) {
    const long long n = static_cast<long long>(i) - static_cast<long long>(centre);
    double h = 0.0;
    if (n == 0) h = 1.0 / (4 * du * du);
    else if (n % 2 != 0) h = -1.0 / (std::numbers::pi * std::numbers::pi * double(n * n) * du * du);
    EXPECT_NEAR(row[i], h * du, 1e-3 * peak) << "offset " << n;
  }
}

TEST(RampFilter, ResponseIsNonNegativeRampWithZeroDc) {
  RampFilter f(64, 1.0);
  const auto& r = f.response();
  EXPECT_EQ(r[0], 0.0);
  const std::size_t N = f.padded_length();
  for (std::size_t k = 1; k < N; ++k) {
    EXPECT_GE(r[k], -1e-12);
    EXPECT_NEAR(r[k], r[N - k], 1e-15);
  }
  // Near Nyquist the band-limited ramp reaches 1/(2 du).
  EXPECT_NEAR(r[N / 2], 0.5, 1e-2);
  // Low frequencies are close to |f|.
  EXPECT_NEAR(r[4], 4.0 / N, 0.2 * 4.0 / N);
}

TEST(RampFilter, SelfTranspose) {
  RampFilter f(17, 1.3);
  auto a = cbct::testing::random_tensor({3 * 17}, 1).to_vector();
  auto b = cbct::testing::random_tensor({3 * 17}, 2).to_vector();
  auto fa = a, fb = b;
  f.apply_rows<double>(fa);
  f.apply_rows<double>(fb);
  double l = 0, r = 0;
  for (std::size_t i = 0; i < a.size(); ++i) l += fa[i] * b[i], r += a[i] * fb[i];
  EXPECT_NEAR(l, r, 1e-12 * std::abs(l));
}

TEST(Fdk, AdjointDoublePrecision) {
  auto s = adjoint_setup("default");
  for (std::uint64_t seed : {1u, 5u}) EXPECT_LE(fdk_adjoint_test<double>(s.geometry, s.grid, seed), 1e-10);
}

TEST(Fdk, AdjointSinglePrecision) {
  auto s = adjoint_setup("default");
  EXPECT_LE(fdk_adjoint_test<float>(s.geometry, s.grid, 3), 1e-4);
}

TEST(Fdk, SphereReconstructionAndSparseDegradation) {
  auto s = desk_setup();
  const double radius = 48.0, mu = 0.02;
  auto truth = cbct::testing::sphere_volume<double>(s.grid, radius, mu);
  auto full = forward_project<double>(truth, s.grid, s.geometry);
  auto sparse_geom = sparse_subsample(s.geometry, 8);
  auto sparse = forward_project<double>(truth, s.grid, sparse_geom);
  auto rec_full = fdk_reconstruct(full, s.grid);
  auto rec_sparse = fdk_reconstruct(sparse, s.grid);

  double sum = 0;
  std::size_t n = 0;
  double err_full = 0, err_sparse = 0;
  for (std::size_t k = 0; k < s.grid.nz; ++k)
    for (std::size_t j = 0; j < s.grid.ny; ++j)
      for (std::size_t i = 0; i < s.grid.nx; ++i) {
        const auto c = s.grid.center(i, j, k);
        const std::size_t idx = s.grid.index(i, j, k);
        if (norm(c) <= 0.75 * radius) {
          sum += rec_full[idx];
          ++n;
        }
        err_full += (rec_full[idx] - truth[idx]) * (rec_full[idx] - truth[idx]);
        err_sparse += (rec_sparse[idx] - truth[idx]) * (rec_sparse[idx] - truth[idx]);
      }
  ASSERT_GT(n, 100u);
  EXPECT_NEAR(sum / n, mu, 0.1 * mu);
  EXPECT_GT(err_sparse, err_full);
}

TEST(Fdk, ScalesLinearlyAndRejectsNonFinite) {
  auto s = adjoint_setup("small");
  FdkOperator op(s.geometry, s.grid);
  auto g = cbct::testing::random_tensor({op.projection_size()}, 4).to_vector();
  auto a = op.reconstruct<double>(g);
  for (auto& v : g) v *= 3.0;
  auto b = op.reconstruct<double>(g);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 3.0 * a[i], 1e-12 * (1 + std::abs(a[i])));
  g[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(op.reconstruct<double>(g), std::invalid_argument);
  std::vector<double> wrong(op.projection_size() + 1);
  EXPECT_THROW(op.reconstruct<double>(wrong), std::invalid_argument);
}

TEST(Fdk, BehindSourceVoxelsAreCounted) {
  ConeBeamGeometry g;
  g.sid_mm = 30.0;
  g.sdd_mm = 60.0;
  g.det_rows = 4;
  g.det_cols = 4;
  g.det_pixel_mm = 10.0;
  g.angles_deg = {0.0};
  VolumeGrid grid{8, 8, 2, 10.0};  // extends to x = 40 mm, beyond the source at 30 mm
  FdkOperator op(g, grid);
  std::vector<double> proj(op.projection_size(), 1.0), vol(grid.size());
  auto stats = op.backproject<double>(proj, vol);
  EXPECT_GT(stats.behind_source, 0u);
  // Columns at x >= 35 mm lie behind the source: 1 column x 8 rows x 2 slices.
  EXPECT_EQ(stats.behind_source, 16u);
  auto inside = adjoint_setup("small");
  FdkOperator ok(inside.geometry, inside.grid);
  std::vector<double> p2(ok.projection_size(), 1.0), v2(inside.grid.size());
  EXPECT_EQ(ok.backproject<double>(p2, v2).behind_source, 0u);
}

TEST(Fdk, LayerGradientMatchesFiniteDifferences) {
  auto s = adjoint_setup("small");
  auto op = std::make_shared<const FdkOperator>(s.geometry, s.grid);
  auto g = cbct::testing::random_tensor({1, 4, 5, 6}, 21);
  g.set_requires_grad(true);
  auto loss = [&] { return cbct::testing::probe(fdk_layer(g, op), 22); };
  EXPECT_LE(cbct::testing::grad_rel_error(g, loss), 1e-6);
}
