#pragma once

// Field snapshot file, little-endian:
//
//   offset  size  content
//   0       4     magic "SBPF"
//   4       4     uint32 format version (1)
//   8       4     int32 dim
//   12      4     int32 n
//   16      8     float64 box length L
//   24      4     int32 space tag (0 physical, 1 frequency)
//   28      4     zero padding
//   32      8     float64 time
//   40      ...   n^dim pairs (float64 re, float64 im), row-major, last axis fastest
//
// Physical fields are stored at x_i = (i - n/2) L/n, frequency fields in DFT order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "sbp/field.hpp"

namespace sbp {

static_assert(std::endian::native == std::endian::little, "snapshot I/O assumes a little-endian host");

inline constexpr char snapshot_magic[4] = {'S', 'B', 'P', 'F'};
inline constexpr std::uint32_t snapshot_version = 1;

struct Snapshot {
  ComplexField field;
  double time = 0.0;
};

namespace detail {

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("snapshot " + path + ": truncated header");
  return v;
}

}  // namespace detail

inline void write_snapshot_stream(std::ostream& os, const ComplexField& f, double time) {
  os.write(snapshot_magic, 4);
  detail::put(os, snapshot_version);
  detail::put(os, static_cast<std::int32_t>(f.grid.dim));
  detail::put(os, static_cast<std::int32_t>(f.grid.n));
  detail::put(os, f.grid.box_length);
  detail::put(os, static_cast<std::int32_t>(f.space == Space::physical ? 0 : 1));
  detail::put(os, std::int32_t{0});
  detail::put(os, time);
  os.write(reinterpret_cast<const char*>(f.values.data()),
           static_cast<std::streamsize>(f.values.size() * sizeof(cplx)));
}

inline Snapshot read_snapshot_stream(std::istream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, snapshot_magic, 4) != 0) throw std::runtime_error("snapshot " + path + ": bad magic");
  auto version = detail::get<std::uint32_t>(is, path);
  if (version != snapshot_version)
    throw std::runtime_error("snapshot " + path + ": unsupported version " + std::to_string(version));
  auto dim = detail::get<std::int32_t>(is, path);
  auto n = detail::get<std::int32_t>(is, path);
  auto L = detail::get<double>(is, path);
  auto tag = detail::get<std::int32_t>(is, path);
  (void)detail::get<std::int32_t>(is, path);
  auto time = detail::get<double>(is, path);
  if (tag != 0 && tag != 1) throw std::runtime_error("snapshot " + path + ": bad space tag");
  GridSpec g = GridSpec::make(dim, n, L);
  Snapshot s{ComplexField(g, tag == 0 ? Space::physical : Space::frequency), time};
  is.read(reinterpret_cast<char*>(s.field.values.data()),
          static_cast<std::streamsize>(s.field.values.size() * sizeof(cplx)));
  if (!is) throw std::runtime_error("snapshot " + path + ": truncated data");
  return s;
}

inline void write_snapshot(const std::string& path, const ComplexField& f, double time) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_snapshot_stream(os, f, time);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline Snapshot read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open snapshot " + path);
  return read_snapshot_stream(is, path);
}

}  // namespace sbp
