#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/checkpoint.hpp"
#include "cbct/dataset.hpp"
#include "cbct/fdk.hpp"
#include "cbct/metrics.hpp"
#include "cbct/models.hpp"
#include "cbct/train.hpp"
#include "cbct/wilcoxon.hpp"

namespace cbct {

/// Plain FDK of stored projections, in HU.
inline Volume fdk_hu(const ProjectionStack<float>& p, const VolumeGrid& grid) {
  Volume mu(grid, Unit::mu_per_mm);
  mu.values = fdk_reconstruct<float>(p, grid);
  return mu_to_hu(mu);
}

/// Eval-mode model prediction, in HU.
inline Volume model_hu(const Reconstructor<float>& model, const ProjectionStack<float>& p) {
  if (geometry_fingerprint(p.geometry, model.grid()) != geometry_fingerprint(model.geometry(), model.grid()))
    throw std::invalid_argument("projections do not match the model geometry");
  const auto pred = model.forward(projection_tensor(p), Mode::eval);
  return denormalize(tensor_volume(pred, model.grid(), Unit::normalized));
}

/// Model rebuilt from a checkpoint (config, weights and running statistics).
inline std::unique_ptr<Reconstructor<float>> load_model(const std::string& checkpoint_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  auto model = std::make_unique<Reconstructor<float>>(ck.config.model, ck.config.sparse_geometry(),
                                                      ck.config.grid(), ck.config.seed);
  restore_state(ck, *model, nullptr);
  return model;
}

inline bool is_model_method(const std::string& m) {
  return m == "fdkconvnet" || m == "pdnet" || m == "pdunet";
}

inline bool is_known_method(const std::string& m) {
  return m == "fdk" || m == "reference" || is_model_method(m);
}

struct MethodResult {
  std::string method;
  std::vector<SliceMetrics> slices;
  double seconds = 0.0;  // reconstruction time over all volumes

  std::vector<double> column(double SliceMetrics::*field) const {
    std::vector<double> out;
    for (const auto& s : slices) out.push_back(s.*field);
    return out;
  }
};

struct EvalReport {
  std::string split;
  std::vector<std::size_t> volumes;
  std::vector<MethodResult> methods;
  // Two-sided Wilcoxon signed-rank p-values on paired per-slice PSNR, NaN if
  // fewer than 5 usable pairs; usable pair counts alongside.
  std::vector<std::vector<double>> p_psnr;
  std::vector<std::vector<std::size_t>> pairs;
};

/// Per-slice SSIM/PSNR/RMSE of each method against the ground truth in HU.
/// Predictions are clamped to [-1000, 2000] HU first. `models` maps a model
/// method name to its network; "fdk" and "reference" need none.
inline EvalReport evaluate(const Dataset& data, Split split, const std::vector<std::string>& methods,
                           const std::map<std::string, const Reconstructor<float>*>& models) {
  EvalReport rep;
  rep.split = split_name(split);
  const auto entries = data.subset(split);
  if (entries.empty()) throw std::invalid_argument(std::string("dataset has no ") + split_name(split) + " volumes");
  if (methods.empty()) throw std::invalid_argument("no methods to evaluate");
  for (const auto& m : methods) {
    if (!is_known_method(m)) throw std::invalid_argument("unknown method '" + m + "'");
    if (is_model_method(m) && !models.count(m)) throw std::invalid_argument("method " + m + " needs a checkpoint");
    rep.methods.push_back({m, {}, 0.0});
  }
  for (const auto& e : entries) {
    rep.volumes.push_back(e.id);
    const Volume ref = data.load_volume(e);
    const auto proj = data.load_projections(e);
    for (auto& r : rep.methods) {
      const auto t0 = std::chrono::steady_clock::now();
      Volume pred;
      if (r.method == "fdk")
        pred = fdk_hu(proj, ref.grid);
      else if (r.method == "reference")
        pred = ref;
      else
        pred = model_hu(*models.at(r.method), proj);
      r.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!(pred.grid == ref.grid)) throw std::invalid_argument(r.method + ": prediction grid does not match the volume");
      const auto s = per_slice_metrics(clamp_hu(pred), ref, e.id);
      r.slices.insert(r.slices.end(), s.begin(), s.end());
    }
  }
  const std::size_t n = rep.methods.size();
  rep.p_psnr.assign(n, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()));
  rep.pairs.assign(n, std::vector<std::size_t>(n, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto a = rep.methods[i].column(&SliceMetrics::psnr);
      const auto b = rep.methods[j].column(&SliceMetrics::psnr);
      std::vector<double> x, y;
      for (std::size_t k = 0; k < a.size(); ++k)
        if (std::isfinite(a[k]) && std::isfinite(b[k])) {
          x.push_back(a[k]);
          y.push_back(b[k]);
        }
      rep.pairs[i][j] = rep.pairs[j][i] = x.size();
      try {
        rep.p_psnr[i][j] = rep.p_psnr[j][i] = wilcoxon_signed_rank(x, y).p_value;
      } catch (const InsufficientSamples&) {
      }
    }
  return rep;
}

inline std::string format_report(const EvalReport& rep) {
  std::ostringstream o;
  char buf[256];
  o << "split: " << rep.split << " (" << rep.volumes.size() << " volumes";
  if (!rep.methods.empty()) o << ", " << rep.methods[0].slices.size() << " slices";
  o << ")\n";
  std::snprintf(buf, sizeof buf, "%-12s %-18s %-18s %-20s %s\n", "method", "SSIM [%]", "PSNR [dB]", "RMSE [HU]",
                "time [s]");
  o << buf;
  for (const auto& r : rep.methods) {
    auto ssim = r.column(&SliceMetrics::ssim);
    for (auto& v : ssim) v *= 100.0;
    const Summary s = summarize(ssim);
    const Summary p = summarize(r.column(&SliceMetrics::psnr));
    const Summary e = summarize(r.column(&SliceMetrics::rmse));
    char cs[64], cp[64], ce[64];
    std::snprintf(cs, sizeof cs, "%.2f +/- %.2f", s.mean, s.stddev);
    std::snprintf(cp, sizeof cp, "%.2f +/- %.2f", p.mean, p.stddev);
    std::snprintf(ce, sizeof ce, "%.1f +/- %.1f", e.mean, e.stddev);
    std::snprintf(buf, sizeof buf, "%-12s %-18s %-18s %-20s %.3f\n", r.method.c_str(), cs, cp, ce, r.seconds);
    o << buf;
    if (p.excluded) o << "  (" << r.method << ": " << p.excluded << " slices with infinite PSNR excluded)\n";
  }
  if (rep.methods.size() > 1) {
    o << "\nWilcoxon signed-rank p-values, per-slice PSNR (two-sided)\n";
    std::snprintf(buf, sizeof buf, "%-12s", "");
    o << buf;
    for (const auto& r : rep.methods) {
      std::snprintf(buf, sizeof buf, " %12s", r.method.c_str());
      o << buf;
    }
    o << "\n";
    for (std::size_t i = 0; i < rep.methods.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%-12s", rep.methods[i].method.c_str());
      o << buf;
      for (std::size_t j = 0; j < rep.methods.size(); ++j) {
        if (i == j)
          std::snprintf(buf, sizeof buf, " %12s", "-");
        else if (std::isnan(rep.p_psnr[i][j]))
          std::snprintf(buf, sizeof buf, " %12s", "n/a");
        else
          std::snprintf(buf, sizeof buf, " %12.3g", rep.p_psnr[i][j]);
        o << buf;
      }
      o << "\n";
    }
  }
  return o.str();
}

/// Machine-readable `key = value` form of the report.
inline std::string format_report_kv(const EvalReport& rep) {
  std::ostringstream o;
  o << "split = " << rep.split << "\n";
  o << "volumes =";
  for (auto v : rep.volumes) o << " " << v;
  o << "\n";
  o << "methods =";
  for (const auto& r : rep.methods) o << " " << r.method;
  o << "\n";
  for (const auto& r : rep.methods) {
    const std::string k = "method." + r.method + ".";
    o << k << "slices = " << r.slices.size() << "\n";
    const std::pair<const char*, double SliceMetrics::*> cols[] = {
        {"ssim", &SliceMetrics::ssim}, {"psnr_db", &SliceMetrics::psnr}, {"rmse_hu", &SliceMetrics::rmse}};
    for (const auto& [name, field] : cols) {
      const Summary s = summarize(r.column(field));
      o << k << name << ".mean = " << detail::format_double(s.mean) << "\n";
      o << k << name << ".std = " << detail::format_double(s.stddev) << "\n";
      o << k << name << ".count = " << s.count << "\n";
    }
    o << k << "seconds = " << detail::format_double(r.seconds) << "\n";
  }
  for (std::size_t i = 0; i < rep.methods.size(); ++i)
    for (std::size_t j = i + 1; j < rep.methods.size(); ++j) {
      const std::string k = "wilcoxon.psnr." + rep.methods[i].method + "." + rep.methods[j].method;
      o << k << ".p = " << (std::isnan(rep.p_psnr[i][j]) ? "nan" : detail::format_double(rep.p_psnr[i][j])) << "\n";
      o << k << ".pairs = " << rep.pairs[i][j] << "\n";
    }
  return o.str();
}

/// Writes the table to `path` and the key-value form to `path`.kv.
inline void write_report(const std::string& path, const EvalReport& rep) {
  for (const auto& [p, text] : {std::pair{path, format_report(rep)}, std::pair{path + ".kv", format_report_kv(rep)}}) {
    std::ofstream out(p);
    out << text;
    if (!out) throw IoError(IoErrc::write_failed, p);
  }
}

struct GreyImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Slice `index` normal to `axis` ('x', 'y' or 'z') as 8-bit grey levels:
/// HU maps linearly from [-1000, 2000] to [0, 255], rounding half up and
/// clamping outside the window. Rows run along the slower remaining axis.
inline GreyImage slice_image(const Volume& v, char axis, std::size_t index) {
  require_unit(v, Unit::hu, "slice_image");
  const auto& g = v.grid;
  std::size_t extent = 0;
  GreyImage img;
  switch (axis) {
    case 'x': extent = g.nx, img.width = g.ny, img.height = g.nz; break;
    case 'y': extent = g.ny, img.width = g.nx, img.height = g.nz; break;
    case 'z': extent = g.nz, img.width = g.nx, img.height = g.ny; break;
    default: throw std::invalid_argument(std::string("axis must be x, y or z, got '") + axis + "'");
  }
  if (index >= extent)
    throw std::invalid_argument("index " + std::to_string(index) + " out of range for axis " + axis + " (extent " +
                                std::to_string(extent) + ")");
  img.pixels.resize(img.width * img.height);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) {
      const float hu = axis == 'x' ? v.at(index, c, r) : axis == 'y' ? v.at(c, index, r) : v.at(c, r, index);
      const double n = std::clamp(normalize_hu_value(hu), 0.0, 1.0);
      img.pixels[r * img.width + c] = static_cast<std::uint8_t>(std::floor(n * 255.0 + 0.5));
    }
  return img;
}

/// Binary PGM (P5, maxval 255).
inline void write_pgm(const std::string& path, const GreyImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrc::open_failed, path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError(IoErrc::write_failed, path);
}

}  // namespace cbct
