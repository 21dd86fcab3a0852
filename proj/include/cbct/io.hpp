#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/projector.hpp"
#include "cbct/volume.hpp"

namespace cbct {

enum class IoErrc {
  open_failed,
  write_failed,
  bad_magic,
  unsupported_version,
  invalid_dimensions,
  truncated,
  invalid_value,
};

inline const char* io_errc_message(IoErrc c) {
  switch (c) {
    case IoErrc::open_failed: return "cannot open file";
    case IoErrc::write_failed: return "write failed";
    case IoErrc::bad_magic: return "bad magic";
    case IoErrc::unsupported_version: return "unsupported version";
    case IoErrc::invalid_dimensions: return "invalid dimensions";
    case IoErrc::truncated: return "truncated payload";
    case IoErrc::invalid_value: return "invalid value";
  }
  return "io error";
}

class IoError : public std::runtime_error {
 public:
  IoError(IoErrc code, const std::string& path, const std::string& detail = {})
      : std::runtime_error(path + ": " + io_errc_message(code) + (detail.empty() ? "" : " (" + detail + ")")),
        code_(code) {}
  IoErrc code() const { return code_; }

 private:
  IoErrc code_;
};

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

namespace detail {

// Little-endian binary writer/reader over fstreams. Size limit on payloads:
// 2^31 elements.
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError(IoErrc::open_failed, path);
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError(IoErrc::write_failed, path_);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void f32(float v) { bytes(&v, 4); }
  void f32s(const float* p, std::size_t n) { bytes(p, n * 4); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void close() {
    out_.close();
    if (!out_) throw IoError(IoErrc::write_failed, path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError(IoErrc::open_failed, path);
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError(IoErrc::truncated, path_);
  }
  void magic(const char (&expect)[5]) {
    char m[4];
    bytes(m, 4);
    if (std::memcmp(m, expect, 4) != 0) throw IoError(IoErrc::bad_magic, path_);
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, 4);
    return v;
  }
  std::vector<float> f32s(std::uint64_t n) {
    if (n > kMaxElements) throw IoError(IoErrc::invalid_dimensions, path_, "payload too large");
    std::vector<float> v(n);
    bytes(v.data(), n * 4);
    return v;
  }
  std::string str(std::uint32_t max_len = 1u << 24) {
    const std::uint32_t n = u32();
    if (n > max_len) throw IoError(IoErrc::invalid_dimensions, path_, "string too long");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

inline std::uint64_t checked_product(std::initializer_list<std::uint64_t> dims, const std::string& path) {
  std::uint64_t p = 1;
  for (auto d : dims) {
    if (d == 0) throw IoError(IoErrc::invalid_dimensions, path, "zero extent");
    if (p > kMaxElements / d) throw IoError(IoErrc::invalid_dimensions, path, "dimension overflow");
    p *= d;
  }
  return p;
}

}  // namespace detail

inline constexpr std::uint32_t kFormatVersion = 1;

/// "CBV1", u32 version, u32 nx, ny, nz, f32 voxel_mm, u32 unit, f32 values.
inline void save_volume(const std::string& path, const Volume& v) {
  if (v.values.size() != v.grid.size())
    throw std::invalid_argument("save_volume: values do not match grid");
  detail::BinWriter w(path);
  w.bytes("CBV1", 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(v.grid.nx));
  w.u32(static_cast<std::uint32_t>(v.grid.ny));
  w.u32(static_cast<std::uint32_t>(v.grid.nz));
  w.f32(static_cast<float>(v.grid.voxel_mm));
  w.u32(static_cast<std::uint32_t>(v.unit));
  w.f32s(v.values.data(), v.values.size());
  w.close();
}

inline Volume load_volume(const std::string& path) {
  detail::BinReader r(path);
  r.magic("CBV1");
  if (r.u32() != kFormatVersion) throw IoError(IoErrc::unsupported_version, path);
  const std::uint32_t nx = r.u32(), ny = r.u32(), nz = r.u32();
  const float voxel = r.f32();
  const std::uint32_t unit = r.u32();
  const auto n = detail::checked_product({nx, ny, nz}, path);
  if (!(voxel > 0) || !std::isfinite(voxel)) throw IoError(IoErrc::invalid_value, path, "voxel size");
  if (unit > 2) throw IoError(IoErrc::invalid_value, path, "unit code");
  Volume v;
  v.grid = VolumeGrid{nx, ny, nz, static_cast<double>(voxel)};
  v.unit = static_cast<Unit>(unit);
  v.values = r.f32s(n);
  return v;
}

/// "CBP1", u32 version, u32 n_views, det_rows, det_cols, f32 pitch, sid, sdd,
/// f32 angles[n_views] (degrees), f32 data view-major, col fastest.
inline void save_projections(const std::string& path, const ProjectionStack<float>& p) {
  p.validate();
  const auto& g = p.geometry;
  detail::BinWriter w(path);
  w.bytes("CBP1", 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(g.n_views()));
  w.u32(static_cast<std::uint32_t>(g.det_rows));
  w.u32(static_cast<std::uint32_t>(g.det_cols));
  w.f32(static_cast<float>(g.det_pixel_mm));
  w.f32(static_cast<float>(g.sid_mm));
  w.f32(static_cast<float>(g.sdd_mm));
  for (double a : g.angles_deg) w.f32(static_cast<float>(a));
  w.f32s(p.data.data(), p.data.size());
  w.close();
}

inline ProjectionStack<float> load_projections(const std::string& path) {
  detail::BinReader r(path);
  r.magic("CBP1");
  if (r.u32() != kFormatVersion) throw IoError(IoErrc::unsupported_version, path);
  const std::uint32_t views = r.u32(), rows = r.u32(), cols = r.u32();
  const auto n = detail::checked_product({views, rows, cols}, path);
  ProjectionStack<float> p;
  p.geometry.det_rows = rows;
  p.geometry.det_cols = cols;
  p.geometry.det_pixel_mm = r.f32();
  p.geometry.sid_mm = r.f32();
  p.geometry.sdd_mm = r.f32();
  p.geometry.angles_deg.resize(views);
  for (auto& a : p.geometry.angles_deg) a = r.f32();
  try {
    p.geometry.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrc::invalid_value, path, e.what());
  }
  p.data = r.f32s(n);
  return p;
}

}  // namespace cbct
