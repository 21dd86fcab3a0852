#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cbct/metrics.hpp"
#include "cbct/wilcoxon.hpp"

using namespace cbct;

namespace {

std::vector<float> random_image(std::size_t n, std::uint64_t seed, float lo = -1000, float hi = 2000) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Two-sided signed-rank p by enumerating every sign assignment of the ranks.
double brute_force_p(const std::vector<double>& ranks, double w_plus) {
  const std::size_t n = ranks.size();
  const double mean = [&] {
    double s = 0;
    for (double r : ranks) s += r;
    return s / 2;
  }();
  std::size_t extreme = 0;
  for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += ranks[i];
    if (std::abs(w - mean) >= std::abs(w_plus - mean) - 1e-12) ++extreme;
  }
  return double(extreme) / double(1ull << n);
}

}  // namespace

TEST(Rmse, DirectSummationOracle) {
  auto a = random_image(1000, 1), b = random_image(1000, 2);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
  EXPECT_NEAR(rmse(a, b), std::sqrt(s / 1000.0), 1e-9 * std::sqrt(s / 1000.0));
  EXPECT_EQ(rmse(a, a), 0.0);
  EXPECT_EQ(rmse(a, b), rmse(b, a));
}

TEST(Rmse, ConstantOffset) {
  auto a = random_image(64, 3);
  auto b = a;
  for (auto& x : b) x += 100.0f;
  // The float addition may round; compute the oracle from the stored values.
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(b[i]) - a[i]) * (double(b[i]) - a[i]);
  EXPECT_EQ(rmse(b, a), std::sqrt(s / 64));
  std::vector<float> z(64, 0.0f), h(64, 100.0f);
  EXPECT_EQ(rmse(h, z), 100.0);
  std::vector<float> shorter(63);
  EXPECT_THROW(rmse(a, shorter), std::invalid_argument);
}

TEST(Psnr, ClosedForm) {
  EXPECT_NEAR(psnr_from_rmse(300.0), 20.0, 1e-12);
  EXPECT_NEAR(psnr_from_rmse(30.0), 40.0, 1e-12);
  EXPECT_TRUE(std::isinf(psnr_from_rmse(0.0)));
  auto a = random_image(500, 4), b = random_image(500, 5);
  const double r = rmse(a, b);
  const double oracle = 20.0 * std::log10(3000.0 / r);
  EXPECT_NEAR(psnr(a, b), oracle, 1e-9 * std::abs(oracle));
}

TEST(Psnr, ScalingErrorByTenLowersBy20dB) {
  std::vector<float> ref(100, 0.0f), e1(100), e10(100);
  auto noise = random_image(100, 6, -8, 8);
  for (std::size_t i = 0; i < 100; ++i) {
    e1[i] = noise[i];
    e10[i] = 10.0f * noise[i];  // exact in float for these magnitudes up to rounding of the product
  }
  EXPECT_NEAR(psnr(e1, ref) - psnr(e10, ref), 20.0, 1e-5);
}

TEST(Ssim, IdenticalIsExactlyOne) {
  auto a = random_image(32 * 24, 7);
  EXPECT_EQ(ssim(a, a, 32, 24), 1.0);
  std::vector<float> flat(16 * 16, 40.0f);
  EXPECT_EQ(ssim(flat, flat, 16, 16), 1.0);
}

TEST(Ssim, SymmetricAndBounded) {
  auto a = random_image(40 * 30, 8), b = random_image(40 * 30, 9);
  const double ab = ssim(a, b, 40, 30), ba = ssim(b, a, 40, 30);
  EXPECT_NEAR(ab, ba, 1e-12);
  EXPECT_GT(ab, -1.0);
  EXPECT_LT(ab, 1.0);
}

TEST(Ssim, LargeConstantShiftCollapsesLuminance) {
  auto a = random_image(20 * 20, 10, -100, 100);
  auto b = a;
  for (auto& x : b) x += 3000.0f;
  EXPECT_LT(ssim(a, b, 20, 20), 0.5);
}

TEST(Ssim, ConstantShiftMatchesLuminanceFormula) {
  // For b = a + c the contrast-structure term is 1 and the local means
  // differ by c: SSIM = mean over windows of (2 m (m + c) + C1) / (m^2 + (m + c)^2 + C1).
  std::vector<float> a(15 * 15, 0.0f), b(15 * 15, 600.0f);
  const double c1 = (0.01 * 3000) * (0.01 * 3000);
  const double oracle = c1 / (600.0 * 600.0 + c1);
  EXPECT_NEAR(ssim(a, b, 15, 15), oracle, 1e-12);
}

TEST(Ssim, TooSmallRejected) {
  std::vector<float> a(10 * 10);
  EXPECT_THROW(ssim(a, a, 10, 10), std::invalid_argument);
}

TEST(PerSlice, CountsAndAggregation) {
  VolumeGrid g{16, 16, 12, 1.0};
  Volume ref(g, Unit::hu), pred(g, Unit::hu);
  ref.values = random_image(g.size(), 11);
  pred.values = random_image(g.size(), 12);
  auto m = per_slice_metrics(pred, ref, 3);
  ASSERT_EQ(m.size(), 12u);
  double mean = 0;
  std::vector<double> r;
  for (std::size_t k = 0; k < m.size(); ++k) {
    EXPECT_EQ(m[k].volume_id, 3u);
    EXPECT_EQ(m[k].slice, k);
    std::span<const float> p(pred.values.data() + k * 256, 256), q(ref.values.data() + k * 256, 256);
    EXPECT_EQ(m[k].rmse, rmse(p, q));
    mean += m[k].rmse;
    r.push_back(m[k].rmse);
  }
  EXPECT_NEAR(summarize(r).mean, mean / 12, 1e-12);
  auto same = per_slice_metrics(ref, ref);
  for (const auto& s : same) {
    EXPECT_EQ(s.rmse, 0.0);
    EXPECT_EQ(s.ssim, 1.0);
    EXPECT_TRUE(std::isinf(s.psnr));
  }
  Volume other(VolumeGrid{16, 16, 11, 1.0}, Unit::hu);
  EXPECT_THROW(per_slice_metrics(other, ref), std::invalid_argument);
}

TEST(Summary, ExcludesNonFinite) {
  std::vector<double> v{1, 2, 3, std::numeric_limits<double>::infinity()};
  auto s = summarize(v);
  EXPECT_EQ(s.count, 3u);
  EXPECT_EQ(s.excluded, 1u);
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.stddev, 1.0);
}

TEST(Wilcoxon, AllPositiveFivePairs) {
  std::vector<double> a{1.1, 2.3, 3.0, 4.8, 5.2}, b{1, 2, 2, 4, 4};
  auto r = wilcoxon_signed_rank(a, b);
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(r.n, 5u);
  EXPECT_EQ(r.w_plus, 15.0);
  EXPECT_DOUBLE_EQ(r.p_value, 0.0625);
  EXPECT_DOUBLE_EQ(brute_force_p({1, 2, 3, 4, 5}, 15.0), 0.0625);
}

TEST(Wilcoxon, ExactMatchesEnumerationWithTies) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> d(-4, 4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(14), b(14, 0.0);
    for (auto& x : a) x = d(rng);
    std::vector<double> diffs;
    for (double x : a)
      if (x != 0) diffs.push_back(x);
    if (diffs.size() < 5) continue;
    // Mid-ranks of |d|.
    std::vector<double> ranks(diffs.size());
    for (std::size_t i = 0; i < diffs.size(); ++i) {
      double less = 0, eq = 0;
      for (double y : diffs) {
        if (std::abs(y) < std::abs(diffs[i])) ++less;
        if (std::abs(y) == std::abs(diffs[i])) ++eq;
      }
      ranks[i] = less + (eq + 1) / 2;
    }
    double w = 0;
    for (std::size_t i = 0; i < diffs.size(); ++i)
      if (diffs[i] > 0) w += ranks[i];
    auto r = wilcoxon_signed_rank(a, b, WilcoxonMethod::exact);
    EXPECT_DOUBLE_EQ(r.w_plus, w);
    EXPECT_NEAR(r.p_value, brute_force_p(ranks, w), 1e-12) << trial;
  }
}

TEST(Wilcoxon, ExactAndNormalAgreeAtThirty) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.3, 1.0);
    std::vector<double> a(30), b(30, 0.0);
    for (auto& x : a) x = nd(rng);
    auto ex = wilcoxon_signed_rank(a, b, WilcoxonMethod::exact);
    auto ap = wilcoxon_signed_rank(a, b, WilcoxonMethod::normal);
    EXPECT_NEAR(ex.p_value, ap.p_value, 0.01) << seed;
    EXPECT_FALSE(wilcoxon_signed_rank(a, b).exact);
  }
}

TEST(Wilcoxon, Properties) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd(0, 1);
  std::vector<double> a(12), b(12);
  for (auto& x : a) x = nd(rng);
  for (auto& x : b) x = nd(rng);
  auto ab = wilcoxon_signed_rank(a, b), ba = wilcoxon_signed_rank(b, a);
  EXPECT_DOUBLE_EQ(ab.p_value, ba.p_value);
  EXPECT_GT(ab.p_value, 0.0);
  EXPECT_LE(ab.p_value, 1.0);
  EXPECT_THROW(wilcoxon_signed_rank(a, a), InsufficientSamples);
  std::vector<double> c(11);
  EXPECT_THROW(wilcoxon_signed_rank(a, c), std::invalid_argument);
}
