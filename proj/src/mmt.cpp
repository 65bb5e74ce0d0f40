#include "mismatch/mmt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mismatch {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'T', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_mmt(const Shape& shape, std::span<const double> values) {
  if (shape_numel(shape) != values.size()) {
    throw FormatError("MMT1: shape " + shape_string(shape) + " does not match " +
                      std::to_string(values.size()) + " values");
  }
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(8 + 4 * shape.size() + 4 * values.size());
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

MmtArray decode_mmt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("MMT1: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("MMT1: bad magic");
  const std::uint32_t rank = get_u32(bytes, 4);
  const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw FormatError("MMT1: truncated header");
  MmtArray arr;
  for (std::uint32_t i = 0; i < rank; ++i) arr.shape.push_back(get_u32(bytes, 8 + 4 * i));
  const std::size_t count = shape_numel(arr.shape);
  if (bytes.size() != header + 4 * count) {
    throw FormatError("MMT1: truncated payload (expected " + std::to_string(4 * count) +
                      " bytes, found " + std::to_string(bytes.size() - header) + ")");
  }
  arr.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    arr.values[i] = std::bit_cast<float>(get_u32(bytes, header + 4 * i));
  }
  return arr;
}

void write_mmt(const std::filesystem::path& path, const Shape& shape,
               std::span<const double> values) {
  const auto bytes = encode_mmt(shape, values);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

MmtArray read_mmt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_mmt(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mismatch
