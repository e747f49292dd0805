#include "itlin/idx.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace itlin::idx {

namespace {

std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void write_be32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path.string());
  is.seekg(0, std::ios::end);
  const std::streamoff size = is.tellg();
  is.seekg(0);
  std::vector<unsigned char> buf(static_cast<std::size_t>(size));
  is.read(reinterpret_cast<char*>(buf.data()), size);
  if (!is) throw std::runtime_error("idx: read failed on " + path.string());
  return buf;
}

}  // namespace

Array read(const std::filesystem::path& path) {
  const std::vector<unsigned char> buf = slurp(path);
  if (buf.size() < 4)
    throw std::runtime_error("idx: " + path.string() + " truncated at byte " + std::to_string(buf.size()) +
                             " (no magic)");
  if (buf[0] != 0 || buf[1] != 0)
    throw std::runtime_error("idx: " + path.string() + " bad magic (first two bytes non-zero)");
  const std::uint8_t type = buf[2];
  const std::uint8_t ndims = buf[3];
  if (type != 0x08 && type != 0x0E)
    throw std::runtime_error("idx: " + path.string() + " unsupported element type 0x" +
                             std::to_string(type));
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndims);
  if (buf.size() < header)
    throw std::runtime_error("idx: " + path.string() + " truncated at byte " + std::to_string(buf.size()) +
                             " (header needs " + std::to_string(header) + ")");
  Array a;
  a.type = type;
  Index count = 1;
  for (std::uint8_t d = 0; d < ndims; ++d) {
    const Index dim = static_cast<Index>(read_be32(buf.data() + 4 + 4 * d));
    a.dims.push_back(dim);
    count *= dim;
  }
  const std::size_t elem = type == 0x08 ? 1 : 8;
  const std::size_t expected = header + elem * static_cast<std::size_t>(count);
  if (buf.size() != expected)
    throw std::runtime_error("idx: " + path.string() + " truncated at byte " + std::to_string(buf.size()) +
                             " (expected " + std::to_string(expected) + " bytes for " +
                             std::to_string(count) + " elements)");
  if (type == 0x08) {
    a.u8.assign(buf.begin() + static_cast<std::ptrdiff_t>(header), buf.end());
  } else {
    a.f64.resize(static_cast<std::size_t>(count));
    std::memcpy(a.f64.data(), buf.data() + header, 8 * static_cast<std::size_t>(count));
  }
  return a;
}

void write_u8(const std::filesystem::path& path, const std::vector<Index>& dims,
              const std::uint8_t* data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("idx: cannot write " + path.string());
  write_be32(os, 0x00000800u | static_cast<std::uint32_t>(dims.size()));
  Index count = 1;
  for (Index d : dims) {
    write_be32(os, static_cast<std::uint32_t>(d));
    count *= d;
  }
  os.write(reinterpret_cast<const char*>(data), count);
  if (!os) throw std::runtime_error("idx: write failed on " + path.string());
}

void write_f64(const std::filesystem::path& path, const std::vector<Index>& dims, const double* data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("idx: cannot write " + path.string());
  write_be32(os, 0x00000E00u | static_cast<std::uint32_t>(dims.size()));
  Index count = 1;
  for (Index d : dims) {
    write_be32(os, static_cast<std::uint32_t>(d));
    count *= d;
  }
  os.write(reinterpret_cast<const char*>(data), 8 * count);
  if (!os) throw std::runtime_error("idx: write failed on " + path.string());
}

CifarBatch read_cifar_batch(const std::filesystem::path& path) {
  const std::vector<unsigned char> buf = slurp(path);
  constexpr std::size_t record = 3073;
  if (buf.empty() || buf.size() % record != 0)
    throw std::runtime_error("cifar: " + path.string() + " has " + std::to_string(buf.size()) +
                             " bytes, not a positive multiple of 3073");
  const std::size_t n = buf.size() / record;
  CifarBatch b;
  b.labels.reserve(n);
  b.pixels.reserve(n * 3072);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char label = buf[i * record];
    if (label > 9)
      throw std::runtime_error("cifar: " + path.string() + " record " + std::to_string(i) +
                               " has label byte " + std::to_string(label) + " > 9");
    b.labels.push_back(label);
    b.pixels.insert(b.pixels.end(), buf.begin() + static_cast<std::ptrdiff_t>(i * record + 1),
                    buf.begin() + static_cast<std::ptrdiff_t>((i + 1) * record));
  }
  return b;
}

void write_cifar_batch(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels,
                       const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != labels.size() * 3072)
    throw std::invalid_argument("cifar: pixel buffer does not match label count");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cifar: cannot write " + path.string());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os.put(static_cast<char>(labels[i]));
    os.write(reinterpret_cast<const char*>(pixels.data() + i * 3072), 3072);
  }
  if (!os) throw std::runtime_error("cifar: write failed on " + path.string());
}

}  // namespace itlin::idx
