#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cbct/adam.hpp"
#include "cbct/config.hpp"
#include "cbct/io.hpp"
#include "cbct/models.hpp"

namespace cbct {

/// Model weights and buffers plus everything needed to resume training.
struct Checkpoint {
  TrainConfig config;
  std::string fingerprint;  // geometry_fingerprint of the sparse geometry and grid
  std::size_t epoch = 0;    // completed epochs
  std::uint64_t step = 0;   // optimizer steps taken
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<NamedTensor<float>> tensors;
  bool has_optimizer = false;
  std::uint64_t adam_step = 0;
  std::vector<NamedTensor<float>> optimizer;  // adam.m.<param>, adam.v.<param>
};

namespace detail {

inline void write_tensors(BinWriter& w, const std::vector<NamedTensor<float>>& ts) {
  w.u32(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.tensor.data().data(), t.tensor.numel());
  }
}

inline std::vector<NamedTensor<float>> read_tensors(BinReader& r) {
  const std::uint32_t n = r.u32();
  if (n > (1u << 20)) throw IoError(IoErrc::invalid_dimensions, r.path(), "tensor count");
  std::vector<NamedTensor<float>> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor<float> t;
    t.name = r.str(4096);
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw IoError(IoErrc::invalid_dimensions, r.path(), "rank of " + t.name);
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0 || numel > kMaxElements / d)
        throw IoError(IoErrc::invalid_dimensions, r.path(), "shape of " + t.name);
      numel *= d;
    }
    t.tensor = Tensor<float>(shape, r.f32s(numel));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

/// "CBK1", u32 version, length-prefixed config text (the resolved config
/// followed by `checkpoint.*` metadata lines), tensors, u8 optimizer flag and,
/// if set, the optimizer tensors.
inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string text = serialize_config(c.config);
  text += "checkpoint.fingerprint = " + c.fingerprint + "\n";
  text += "checkpoint.epoch = " + std::to_string(c.epoch) + "\n";
  text += "checkpoint.step = " + std::to_string(c.step) + "\n";
  if (std::isfinite(c.best_val)) text += "checkpoint.best_val = " + detail::format_double(c.best_val) + "\n";
  if (c.has_optimizer) text += "checkpoint.adam_step = " + std::to_string(c.adam_step) + "\n";
  detail::BinWriter w(path);
  w.bytes("CBK1", 4);
  w.u32(kFormatVersion);
  w.str(text);
  detail::write_tensors(w, c.tensors);
  w.u8(c.has_optimizer ? 1 : 0);
  if (c.has_optimizer) detail::write_tensors(w, c.optimizer);
  w.close();
}

inline Checkpoint load_checkpoint(const std::string& path) {
  detail::BinReader r(path);
  r.magic("CBK1");
  if (r.u32() != kFormatVersion) throw IoError(IoErrc::unsupported_version, path);
  Checkpoint c;
  std::map<std::string, std::string> meta;
  try {
    c.config = parse_config(r.str(), &meta);
  } catch (const ConfigError& e) {
    throw IoError(IoErrc::invalid_value, path, std::string("config block: ") + e.what());
  }
  auto get = [&](const std::string& key, bool required) -> std::string {
    auto it = meta.find("checkpoint." + key);
    if (it == meta.end()) {
      if (required) throw IoError(IoErrc::invalid_value, path, "missing checkpoint." + key);
      return {};
    }
    return it->second;
  };
  try {
    c.fingerprint = get("fingerprint", true);
    c.epoch = detail::parse_uint(get("epoch", true));
    c.step = detail::parse_uint(get("step", true));
    if (auto v = get("best_val", false); !v.empty()) c.best_val = detail::parse_double(v);
    if (auto v = get("adam_step", false); !v.empty()) c.adam_step = detail::parse_uint(v);
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrc::invalid_value, path, e.what());
  }
  c.tensors = detail::read_tensors(r);
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw IoError(IoErrc::invalid_value, path, "optimizer flag");
  c.has_optimizer = flag == 1;
  if (c.has_optimizer) c.optimizer = detail::read_tensors(r);
  return c;
}

/// Snapshot of a model (and optionally its Adam state) as checkpoint tensors.
inline void capture_state(Checkpoint& c, const Reconstructor<float>& model, const AdamState<float>* adam) {
  c.tensors.clear();
  for (const auto& t : model.state()) c.tensors.push_back({t.name, t.tensor.detach()});
  c.fingerprint = geometry_fingerprint(model.geometry(), model.grid());
  c.has_optimizer = adam != nullptr;
  c.optimizer.clear();
  if (!adam) return;
  c.adam_step = adam->step;
  const auto& params = model.registry().params();
  if (adam->first_moment.empty()) return;  // no step taken yet
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Shape& s = params[k].tensor.shape();
    c.optimizer.push_back({"adam.m." + params[k].name, Tensor<float>(s, adam->first_moment[k])});
    c.optimizer.push_back({"adam.v." + params[k].name, Tensor<float>(s, adam->second_moment[k])});
  }
}

/// Loads weights into `model`, checking the geometry fingerprint, and
/// optionally restores the optimizer state.
inline void restore_state(const Checkpoint& c, Reconstructor<float>& model, AdamState<float>* adam) {
  const auto fp = geometry_fingerprint(model.geometry(), model.grid());
  if (c.fingerprint != fp)
    throw std::invalid_argument("checkpoint geometry fingerprint " + c.fingerprint +
                                " does not match the scan setup (" + fp + ")");
  model.load_values(c.tensors);
  if (!adam) return;
  if (!c.has_optimizer) throw std::invalid_argument("checkpoint has no optimizer state");
  adam->step = c.adam_step;
  adam->first_moment.clear();
  adam->second_moment.clear();
  if (c.optimizer.empty()) return;
  const auto& params = model.registry().params();
  if (c.optimizer.size() != 2 * params.size())
    throw std::invalid_argument("checkpoint optimizer state does not match the model");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& m = c.optimizer[2 * k];
    const auto& v = c.optimizer[2 * k + 1];
    if (m.name != "adam.m." + params[k].name || v.name != "adam.v." + params[k].name ||
        m.tensor.shape() != params[k].tensor.shape() || v.tensor.shape() != params[k].tensor.shape())
      throw std::invalid_argument("checkpoint optimizer state does not match parameter " + params[k].name);
    adam->first_moment.push_back(m.tensor.to_vector());
    adam->second_moment.push_back(v.tensor.to_vector());
  }
}

}  // namespace cbct
