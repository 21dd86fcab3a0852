#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cbct/ops.hpp"

namespace cbct::testing {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                                    double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = uni(rng);
  return t;
}

/// Smooth scalar probe: <w, f> for a fixed random w.
inline Tensor<double> probe(const Tensor<double>& f, std::uint64_t seed = 99) {
  auto w = random_tensor(f.shape(), seed);
  return sum(mul(f, w));
}

/// Norm-wise relative error max|analytic - numeric| / max|numeric| of the
/// gradient of `loss_fn` with respect to `param`, by central differences
/// with h = 1e-4 * max(1, |x|). At most `max_entries` entries are probed,
/// spread evenly over the tensor.
inline double grad_rel_error(Tensor<double>& param, const std::function<Tensor<double>()>& loss_fn,
                             std::size_t max_entries = 400) {
  param.zero_grad();
  loss_fn().backward();
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
  param.zero_grad();

  auto data = param.mutable_data();
  const std::size_t stride = std::max<std::size_t>(1, data.size() / max_entries);
  double max_diff = 0.0, max_num = 0.0;
  for (std::size_t i = 0; i < data.size(); i += stride) {
    const double orig = data[i];
    const double h = 1e-4 * std::max(1.0, std::abs(orig));
    data[i] = orig + h;
    const double lp = loss_fn().item();
    data[i] = orig - h;
    const double lm = loss_fn().item();
    data[i] = orig;
    const double numeric = (lp - lm) / (2 * h);
    max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
    max_num = std::max(max_num, std::abs(numeric));
  }
  return max_diff / std::max(max_num, 1e-300);
}

}  // namespace cbct::testing
