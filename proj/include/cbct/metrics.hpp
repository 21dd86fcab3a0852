#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/volume.hpp"

namespace cbct {

/// Default dynamic range for PSNR and SSIM: the [-1000, 2000] HU window.
inline constexpr double kDefaultDataRange = kHuRange;

namespace detail {
inline void require_same_size(std::size_t a, std::size_t b, const char* who) {
  if (a != b)
    throw std::invalid_argument(std::string(who) + ": size mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
}
}  // namespace detail

/// sqrt(mean((pred - ref)^2)).
inline double rmse(std::span<const float> pred, std::span<const float> ref) {
  detail::require_same_size(pred.size(), ref.size(), "rmse");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - ref[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

inline double psnr_from_rmse(double rmse_value, double data_range = kDefaultDataRange) {
  if (rmse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(data_range / rmse_value);
}

/// 20 log10(range / rmse); +inf for identical inputs.
inline double psnr(std::span<const float> pred, std::span<const float> ref,
                   double data_range = kDefaultDataRange) {
  return psnr_from_rmse(rmse(pred, ref), data_range);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = kDefaultDataRange;
};

/// Mean structural similarity of two width x height images (row-major),
/// Gaussian-weighted local statistics over every fully contained window.
inline double ssim(std::span<const float> a, std::span<const float> b, std::size_t width,
                   std::size_t height, const SsimParams& prm = {}) {
  detail::require_same_size(a.size(), b.size(), "ssim");
  detail::require_same_size(a.size(), width * height, "ssim");
  const auto win = static_cast<std::size_t>(prm.window);
  if (width < win || height < win)
    throw std::invalid_argument("ssim: image " + std::to_string(width) + "x" +
                                std::to_string(height) + " is smaller than the " +
                                std::to_string(win) + "x" + std::to_string(win) + " window");

  std::vector<double> g(win);
  double gs = 0.0;
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(win - 1) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * prm.sigma * prm.sigma));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;

  const std::size_t ow = width - win + 1, oh = height - win + 1;
  // Separable valid-mode filtering of one image-shaped field.
  auto filter = [&](auto&& field) {
    std::vector<double> tmp(height * ow), out(oh * ow);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t k = 0; k < win; ++k) s += g[k] * field(y * width + x + k);
        tmp[y * ow + x] = s;
      }
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t k = 0; k < win; ++k) s += g[k] * tmp[(y + k) * ow + x];
        out[y * ow + x] = s;
      }
    return out;
  };
  auto A = [&](std::size_t i) { return static_cast<double>(a[i]); };
  auto B = [&](std::size_t i) { return static_cast<double>(b[i]); };
  const auto mu_a = filter(A);
  const auto mu_b = filter(B);
  const auto aa = filter([&](std::size_t i) { return A(i) * A(i); });
  const auto bb = filter([&](std::size_t i) { return B(i) * B(i); });
  const auto ab = filter([&](std::size_t i) { return A(i) * B(i); });

  const double c1 = (prm.k1 * prm.data_range) * (prm.k1 * prm.data_range);
  const double c2 = (prm.k2 * prm.data_range) * (prm.k2 * prm.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = aa[i] - ma * ma, vb = bb[i] - mb * mb, cov = ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

struct SliceMetrics {
  std::size_t volume_id = 0;
  std::size_t slice = 0;
  double ssim = 0.0;  // fraction
  double psnr = 0.0;  // dB, +inf for identical slices
  double rmse = 0.0;  // HU
};

/// SSIM, PSNR and RMSE of every axial (constant z) slice, in HU.
inline std::vector<SliceMetrics> per_slice_metrics(const Volume& pred, const Volume& ref,
                                                   std::size_t volume_id = 0,
                                                   double data_range = kDefaultDataRange) {
  require_unit(pred, Unit::hu, "per_slice_metrics");
  require_unit(ref, Unit::hu, "per_slice_metrics");
  if (!(pred.grid == ref.grid)) throw std::invalid_argument("per_slice_metrics: grid mismatch");
  const auto& g = ref.grid;
  const std::size_t plane = g.nx * g.ny;
  SsimParams prm;
  prm.data_range = data_range;
  std::vector<SliceMetrics> out;
  out.reserve(g.nz);
  for (std::size_t k = 0; k < g.nz; ++k) {
    std::span<const float> p(pred.values.data() + k * plane, plane);
    std::span<const float> r(ref.values.data() + k * plane, plane);
    SliceMetrics m;
    m.volume_id = volume_id;
    m.slice = k;
    m.rmse = rmse(p, r);
    m.psnr = psnr_from_rmse(m.rmse, data_range);
    m.ssim = ssim(p, r, g.nx, g.ny, prm);
    out.push_back(m);
  }
  return out;
}

struct Summary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = std::numeric_limits<double>::quiet_NaN();  // sample (n-1) standard deviation
  std::size_t count = 0;
  std::size_t excluded = 0;  // non-finite entries left out
};

inline Summary summarize(std::span<const double> values) {
  Summary s;
  double acc = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) {
      ++s.excluded;
      continue;
    }
    acc += v;
    ++s.count;
  }
  if (s.count == 0) return s;
  s.mean = acc / static_cast<double>(s.count);
  double ss = 0.0;
  for (double v : values)
    if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
  s.stddev = s.count > 1 ? std::sqrt(ss / static_cast<double>(s.count - 1)) : 0.0;
  return s;
}

}  // namespace cbct
