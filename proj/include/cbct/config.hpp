#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "cbct/adam.hpp"
#include "cbct/augment.hpp"
#include "cbct/geometry.hpp"
#include "cbct/io.hpp"
#include "cbct/models.hpp"

namespace cbct {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a run needs: optimizer protocol, scan setup, model and
/// augmentation. Defaults are the desk-scale preset with the published
/// optimizer settings.
struct TrainConfig {
  // optimizer
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t epochs = 151;
  std::size_t effective_batch = 16;
  std::size_t micro_batch = 1;
  std::size_t max_steps = 0;  // 0: no limit
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1;  // epochs between last.cbk writes
  // scan
  std::size_t sparse_factor = 8;
  std::size_t n_views = 90;
  double sid_mm = 160.0;
  double sdd_mm = 400.0;
  std::size_t det_rows = 60;
  std::size_t det_cols = 78;
  double det_pixel_mm = 4.928;
  std::size_t grid_nx = 32, grid_ny = 32, grid_nz = 32;
  double voxel_mm = 4.0;
  // model
  ModelConfig model = [] {
    ModelConfig m;
    m.unet_depth = 2;
    m.unet_base_channels = 8;
    return m;
  }();
  // augmentation
  AugmentConfig augment;

  ConeBeamGeometry full_geometry() const {
    ConeBeamGeometry g;
    g.sid_mm = sid_mm;
    g.sdd_mm = sdd_mm;
    g.det_rows = det_rows;
    g.det_cols = det_cols;
    g.det_pixel_mm = det_pixel_mm;
    g.angles_deg = equiangular_angles(n_views);
    return g;
  }
  ConeBeamGeometry sparse_geometry() const {
    return sparse_subsample(full_geometry(), static_cast<long long>(sparse_factor));
  }
  VolumeGrid grid() const { return VolumeGrid{grid_nx, grid_ny, grid_nz, voxel_mm}; }
  AdamHyper adam() const { return AdamHyper{lr, beta1, beta2, 1e-8}; }

  void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct ConfigField {
  std::string key;
  std::function<void(TrainConfig&, const std::string&)> parse;  // throws std::invalid_argument
  std::function<std::string(const TrainConfig&)> print;
};

inline double parse_double(const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw std::invalid_argument("expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

template <typename M>
ConfigField dbl(std::string key, M member) {
  return {key, [member](TrainConfig& c, const std::string& v) { std::invoke(member, c) = parse_double(v); },
          [member](const TrainConfig& c) { return format_double(std::invoke(member, c)); }};
}

template <typename M>
ConfigField uinteger(std::string key, M member) {
  return {key,
          [member](TrainConfig& c, const std::string& v) {
            std::invoke(member, c) = static_cast<std::remove_reference_t<decltype(std::invoke(member, c))>>(parse_uint(v));
          },
          [member](const TrainConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename M>
ConfigField boolean(std::string key, M member) {
  return {key, [member](TrainConfig& c, const std::string& v) { std::invoke(member, c) = parse_bool(v); },
          [member](const TrainConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(dbl("lr", &TrainConfig::lr));
    f.push_back(dbl("beta1", &TrainConfig::beta1));
    f.push_back(dbl("beta2", &TrainConfig::beta2));
    f.push_back(uinteger("epochs", &TrainConfig::epochs));
    f.push_back(uinteger("effective_batch", &TrainConfig::effective_batch));
    f.push_back(uinteger("micro_batch", &TrainConfig::micro_batch));
    f.push_back(uinteger("max_steps", &TrainConfig::max_steps));
    f.push_back(uinteger("seed", &TrainConfig::seed));
    f.push_back(uinteger("checkpoint_every", &TrainConfig::checkpoint_every));
    f.push_back(uinteger("sparse_factor", &TrainConfig::sparse_factor));
    f.push_back(uinteger("n_views", &TrainConfig::n_views));
    f.push_back(dbl("sid_mm", &TrainConfig::sid_mm));
    f.push_back(dbl("sdd_mm", &TrainConfig::sdd_mm));
    f.push_back(uinteger("det_rows", &TrainConfig::det_rows));
    f.push_back(uinteger("det_cols", &TrainConfig::det_cols));
    f.push_back(dbl("det_pixel_mm", &TrainConfig::det_pixel_mm));
    f.push_back(uinteger("grid_nx", &TrainConfig::grid_nx));
    f.push_back(uinteger("grid_ny", &TrainConfig::grid_ny));
    f.push_back(uinteger("grid_nz", &TrainConfig::grid_nz));
    f.push_back(dbl("voxel_mm", &TrainConfig::voxel_mm));
    f.push_back({"model",
                 [](TrainConfig& c, const std::string& v) { c.model.kind = parse_model_kind(v); },
                 [](const TrainConfig& c) { return std::string(model_kind_name(c.model.kind)); }});
    f.push_back(uinteger("n_iterations", [](auto& c) -> auto& { return c.model.n_iterations; }));
    f.push_back(uinteger("primal_channels", [](auto& c) -> auto& { return c.model.primal_channels; }));
    f.push_back(uinteger("dual_channels", [](auto& c) -> auto& { return c.model.dual_channels; }));
    f.push_back(uinteger("hidden_channels", [](auto& c) -> auto& { return c.model.hidden_channels; }));
    f.push_back(uinteger("unet_depth", [](auto& c) -> auto& { return c.model.unet_depth; }));
    f.push_back(uinteger("unet_base_channels", [](auto& c) -> auto& { return c.model.unet_base_channels; }));
    f.push_back(boolean("share_primal_weights", [](auto& c) -> auto& { return c.model.share_primal_weights; }));
    f.push_back(boolean("augment", [](auto& c) -> auto& { return c.augment.enabled; }));
    f.push_back(dbl("flip_probability", [](auto& c) -> auto& { return c.augment.flip_probability; }));
    f.push_back(dbl("max_rotation_deg", [](auto& c) -> auto& { return c.augment.max_rotation_deg; }));
    f.push_back(dbl("scale_min", [](auto& c) -> auto& { return c.augment.scale_min; }));
    f.push_back(dbl("scale_max", [](auto& c) -> auto& { return c.augment.scale_max; }));
    return f;
  }();
  return fields;
}

}  // namespace detail

inline void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!(lr > 0)) fail("lr must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("beta1 and beta2 must lie in [0, 1)");
  if (epochs < 1) fail("epochs must be >= 1");
  if (micro_batch < 1 || effective_batch < 1) fail("batch sizes must be >= 1");
  if (effective_batch % micro_batch != 0) fail("effective_batch must be divisible by micro_batch");
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  if (sparse_factor < 1) fail("sparse_factor must be >= 1");
  if (n_views < 1) fail("n_views must be >= 1");
  if (!(augment.flip_probability >= 0 && augment.flip_probability <= 1)) fail("flip_probability must lie in [0, 1]");
  if (!(augment.max_rotation_deg >= 0)) fail("max_rotation_deg must be >= 0");
  if (!(augment.scale_min > 0 && augment.scale_min <= augment.scale_max)) fail("need 0 < scale_min <= scale_max");
  try {
    full_geometry().validate();
    grid().validate();
    model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

/// Parses `key = value` lines (`#` starts a comment). Keys under
/// `extra_prefix` (if non-empty) are returned in `extras` instead of being
/// rejected; any other unknown key is an error.
inline TrainConfig parse_config(const std::string& text, std::map<std::string, std::string>* extras = nullptr,
                                const std::string& extra_prefix = "checkpoint.") {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": missing key");
    if (auto it = seen.find(key); it != seen.end())
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "' (first on line " +
                        std::to_string(it->second) + ")");
    seen[key] = lineno;
    if (extras && !extra_prefix.empty() && key.rfind(extra_prefix, 0) == 0) {
      (*extras)[key] = value;
      continue;
    }
    const auto& fields = detail::config_fields();
    auto f = std::find_if(fields.begin(), fields.end(), [&](const auto& x) { return x.key == key; });
    if (f == fields.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      f->parse(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrc::open_failed, path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Every key, one `key = value` line each, in a fixed order.
inline std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += f.key + " = " + f.print(cfg) + "\n";
  return out;
}

}  // namespace cbct
