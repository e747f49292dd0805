#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "itlin/tensor.hpp"

namespace itlin::idx {

// IDX container (big-endian dimension headers, magic [0,0,type,ndims]).
// Supported element types: 0x08 (unsigned byte) and 0x0E (double).
struct Array {
  std::uint8_t type = 0x08;
  std::vector<Index> dims;
  std::vector<std::uint8_t> u8;
  std::vector<double> f64;

  Index count() const {
    Index n = 1;
    for (Index d : dims) n *= d;
    return n;
  }
};

Array read(const std::filesystem::path& path);
void write_u8(const std::filesystem::path& path, const std::vector<Index>& dims, const std::uint8_t* data);
void write_f64(const std::filesystem::path& path, const std::vector<Index>& dims, const double* data);

// One CIFAR-10 binary batch: per record 1 label byte + 3072 channel-major
// pixel bytes. The file size must be a multiple of 3073.
struct CifarBatch {
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // n * 3072
};

CifarBatch read_cifar_batch(const std::filesystem::path& path);
void write_cifar_batch(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels,
                       const std::vector<std::uint8_t>& pixels);

}  // namespace itlin::idx
