#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "itlin/tensor.hpp"

namespace itlin {

// Flat binary checkpoint: magic "ILCK", version u32, p u64, p little-endian
// float64 values twice (theta_t then theta_s), then the step as u64.
struct Checkpoint {
  VecX<double> theta_t;
  VecX<double> theta_s;
  std::uint64_t step = 0;
};

namespace detail {

inline void put_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ofstream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::ifstream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::ifstream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const VecX<double>& theta_t,
                             const VecX<double>& theta_s, std::uint64_t step) {
  if (theta_t.size() != theta_s.size())
    throw std::invalid_argument("checkpoint: theta_t and theta_s have different lengths");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
  os.write("ILCK", 4);
  detail::put_u32(os, 1u);
  detail::put_u64(os, static_cast<std::uint64_t>(theta_t.size()));
  os.write(reinterpret_cast<const char*>(theta_t.data()), 8 * theta_t.size());
  os.write(reinterpret_cast<const char*>(theta_s.data()), 8 * theta_s.size());
  detail::put_u64(os, step);
  if (!os) throw std::runtime_error("checkpoint: write failed on " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ILCK", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t p = detail::get_u64(is);
  Checkpoint c;
  c.theta_t.resize(static_cast<Index>(p));
  c.theta_s.resize(static_cast<Index>(p));
  is.read(reinterpret_cast<char*>(c.theta_t.data()), 8 * static_cast<std::streamsize>(p));
  is.read(reinterpret_cast<char*>(c.theta_s.data()), 8 * static_cast<std::streamsize>(p));
  c.step = detail::get_u64(is);
  if (!is) throw std::runtime_error("checkpoint: " + path.string() + " truncated");
  return c;
}

}  // namespace itlin
