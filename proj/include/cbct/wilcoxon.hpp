#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbct {

enum class WilcoxonMethod { automatic, exact, normal };

struct WilcoxonResult {
  double p_value = 1.0;  // two-sided
  double w_plus = 0.0;   // sum of ranks of positive differences
  std::size_t n = 0;     // pairs left after dropping zero differences
  bool exact = false;
};

/// Largest n for which `automatic` uses the exact null distribution.
inline constexpr std::size_t kWilcoxonExactMax = 25;

class InsufficientSamples : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied |differences| get mid-ranks. The
/// exact path enumerates the null distribution of W+ over all 2^n sign
/// assignments (as a subset-sum count over doubled ranks, so mid-ranks stay
/// integral). The normal path uses the tie-corrected variance and a 0.5
/// continuity correction.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           WilcoxonMethod method = WilcoxonMethod::automatic) {
  if (a.size() != b.size())
    throw std::invalid_argument("wilcoxon_signed_rank: samples must be paired (equal lengths)");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] - b[i];
    if (x != 0.0) d.push_back(x);
  }
  const std::size_t n = d.size();
  if (n < 5)
    throw InsufficientSamples("wilcoxon_signed_rank: insufficient samples (" + std::to_string(n) +
                              " non-zero differences, need 5)");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<long long> rank2(n);  // doubled mid-ranks
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const auto t = static_cast<long long>(j - i + 1);
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = static_cast<long long>(i + j + 2);
    tie_term += static_cast<double>(t * t * t - t);
    i = j + 1;
  }

  WilcoxonResult res;
  res.n = n;
  long long w2 = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w2 += rank2[i];
  res.w_plus = static_cast<double>(w2) / 2.0;

  const bool use_exact = method == WilcoxonMethod::exact ||
                         (method == WilcoxonMethod::automatic && n <= kWilcoxonExactMax);
  if (use_exact) {
    const long long total2 = std::accumulate(rank2.begin(), rank2.end(), 0LL);
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    long long reach = 0;
    for (long long r : rank2) {
      for (long long s = reach; s >= 0; --s)
        if (count[static_cast<std::size_t>(s)] != 0.0)
          count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
      reach += r;
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double le = 0.0, ge = 0.0;
    for (long long s = 0; s <= total2; ++s) {
      if (s <= w2) le += count[static_cast<std::size_t>(s)];
      if (s >= w2) ge += count[static_cast<std::size_t>(s)];
    }
    res.p_value = std::min(1.0, 2.0 * std::min(le, ge) / all);
    res.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(res.w_plus - mean) - 0.5) / std::sqrt(var);
    res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    res.exact = false;
  }
  return res;
}

}  // namespace cbct
