#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/config.hpp"
#include "cbct/io.hpp"
#include "cbct/phantom.hpp"
#include "cbct/simulate.hpp"

namespace cbct {

/// SplitMix64 finalizer over (a, b): derives independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E5ADull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

enum class Split { train, validation, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

struct SplitCounts {
  std::size_t train = 0, validation = 0, test = 0;
};

/// 42/9/10 proportions: validation = round(9n/61), test = round(10n/61),
/// train = the rest.
inline SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.validation = static_cast<std::size_t>(std::llround(9.0 * static_cast<double>(n) / 61.0));
  c.test = static_cast<std::size_t>(std::llround(10.0 * static_cast<double>(n) / 61.0));
  if (c.validation + c.test > n) throw std::invalid_argument("split_counts: too few volumes");
  c.train = n - c.validation - c.test;
  return c;
}

struct DatasetEntry {
  std::size_t id = 0;
  Split split = Split::train;
  std::string volume_file;      // relative to the dataset directory
  std::string projection_file;  // sparse projections
};

struct Dataset {
  std::filesystem::path dir;
  std::string fingerprint;
  std::size_t sparse_factor = 0;
  std::uint64_t seed = 0;
  std::vector<DatasetEntry> entries;

  std::vector<DatasetEntry> subset(Split s) const {
    std::vector<DatasetEntry> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e);
    return out;
  }
  std::string volume_path(const DatasetEntry& e) const { return (dir / e.volume_file).string(); }
  std::string projection_path(const DatasetEntry& e) const { return (dir / e.projection_file).string(); }
  Volume load_volume(const DatasetEntry& e) const { return cbct::load_volume(volume_path(e)); }
  ProjectionStack<float> load_projections(const DatasetEntry& e) const {
    return cbct::load_projections(projection_path(e));
  }
};

/// Phantoms, sparse projections, the resolved config and a manifest in
/// `out_dir`. Volume i uses phantom seed mix_seed(seed, i); the first volumes
/// go to training, then validation, then test.
inline Dataset simulate_dataset(const TrainConfig& cfg, std::size_t n_volumes, std::uint64_t seed,
                                const std::filesystem::path& out_dir) {
  cfg.validate();
  if (n_volumes < 1) throw std::invalid_argument("simulate: need at least one volume");
  const SplitCounts counts = split_counts(n_volumes);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(IoErrc::open_failed, out_dir.string(), ec.message());

  const auto full = cfg.full_geometry();
  const auto grid = cfg.grid();
  Dataset ds;
  ds.dir = out_dir;
  ds.fingerprint = geometry_fingerprint(cfg.sparse_geometry(), grid);
  ds.sparse_factor = cfg.sparse_factor;
  ds.seed = seed;
  for (std::size_t i = 0; i < n_volumes; ++i) {
    DatasetEntry e;
    e.id = i;
    e.split = i < counts.train ? Split::train
              : i < counts.train + counts.validation ? Split::validation
                                                      : Split::test;
    char name[32];
    std::snprintf(name, sizeof name, "vol_%03zu.cbv", i);
    e.volume_file = name;
    std::snprintf(name, sizeof name, "proj_%03zu.cbp", i);
    e.projection_file = name;
    const Volume v = generate_phantom(mix_seed(seed, i), grid);
    const SimulatedScan scan = simulate_scan(v, full, static_cast<long long>(cfg.sparse_factor));
    save_volume((out_dir / e.volume_file).string(), v);
    save_projections((out_dir / e.projection_file).string(), scan.projections);
    ds.entries.push_back(e);
  }

  std::ofstream cfg_out(out_dir / "config.cfg");
  cfg_out << serialize_config(cfg);
  if (!cfg_out) throw IoError(IoErrc::write_failed, (out_dir / "config.cfg").string());

  const auto manifest = out_dir / "manifest.txt";
  std::ofstream m(manifest);
  m << "n_volumes = " << n_volumes << "\n";
  m << "seed = " << seed << "\n";
  m << "sparse_factor = " << cfg.sparse_factor << "\n";
  m << "fingerprint = " << ds.fingerprint << "\n";
  m << "split.train = " << counts.train << "\n";
  m << "split.validation = " << counts.validation << "\n";
  m << "split.test = " << counts.test << "\n";
  for (const auto& e : ds.entries)
    m << "volume." << e.id << " = " << split_name(e.split) << " " << e.volume_file << " " << e.projection_file
      << "\n";
  m.close();
  if (!m) throw IoError(IoErrc::write_failed, manifest.string());
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.txt";
  std::ifstream in(path);
  if (!in) throw IoError(IoErrc::open_failed, path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError(IoErrc::invalid_value, path.string(), "line " + std::to_string(lineno));
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw IoError(IoErrc::invalid_value, path.string(), "missing " + k);
    return it->second;
  };
  Dataset ds;
  ds.dir = dir;
  try {
    const auto n = detail::parse_uint(need("n_volumes"));
    ds.seed = detail::parse_uint(need("seed"));
    ds.sparse_factor = detail::parse_uint(need("sparse_factor"));
    ds.fingerprint = need("fingerprint");
    for (std::uint64_t i = 0; i < n; ++i) {
      std::istringstream fields(need("volume." + std::to_string(i)));
      std::string split;
      DatasetEntry e;
      e.id = i;
      if (!(fields >> split >> e.volume_file >> e.projection_file))
        throw std::invalid_argument("malformed entry volume." + std::to_string(i));
      e.split = parse_split(split);
      ds.entries.push_back(e);
    }
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrc::invalid_value, path.string(), e.what());
  }
  return ds;
}

}  // namespace cbct
