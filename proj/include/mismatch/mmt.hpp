#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mismatch/tensor.hpp"

namespace mismatch {

/// "MMT1" tensor files: 4-byte magic, u32 LE rank, rank x u32 LE dims,
/// row-major float32 LE payload.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MmtArray {
  Shape shape;
  std::vector<double> values;  // widened from the float32 payload
};

std::vector<std::uint8_t> encode_mmt(const Shape& shape, std::span<const double> values);
MmtArray decode_mmt(std::span<const std::uint8_t> bytes);

void write_mmt(const std::filesystem::path& path, const Shape& shape,
               std::span<const double> values);
MmtArray read_mmt(const std::filesystem::path& path);

inline void write_mmt(const std::filesystem::path& path, const Tensor& t) {
  write_mmt(path, t.shape(), t.data());
}

}  // namespace mismatch
