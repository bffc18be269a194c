/**
 * TensorFile: little-endian binary container for dense binary64 tensors.
 *
 *   offset  size        field
 *   0       4           magic "BFPT"
 *   4       4           format version, u32 (= 1)
 *   8       1           element type code, u8 (1 = binary64)
 *   9       1           rank, u8
 *   10      8 * rank    dims, u64 each
 *   ...     8 * prod    payload, row-major
 */
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfpcnn/tensor.hpp"

namespace bfpcnn {

inline constexpr std::array<char, 4> kTensorMagic = {'B', 'F', 'P', 'T'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint8_t kElementBinary64 = 1;

class TensorFileError : public std::runtime_error {
 public:
  TensorFileError(std::size_t offset, const std::string& what)
      : std::runtime_error("tensor file error at byte " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

struct TensorData {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{in[at + i]} << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensor(const TensorData& t) {
  if (t.dims.size() > 255) throw std::invalid_argument("tensor rank exceeds 255");
  if (t.element_count() != t.values.size()) {
    throw std::invalid_argument("tensor values do not match its dims");
  }
  std::vector<std::uint8_t> out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_le(out, kTensorFormatVersion, 4);
  out.push_back(kElementBinary64);
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) detail::put_le(out, d, 8);
  for (double v : t.values) detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  return out;
}

inline TensorData decode_tensor(std::span<const std::uint8_t> bytes) {
  auto need = [&](std::size_t at, std::size_t n, const char* what) {
    if (bytes.size() < at + n) throw TensorFileError(bytes.size(), std::string("truncated ") + what);
  };
  need(0, 4, "magic");
  for (std::size_t i = 0; i < 4; ++i) {
    if (static_cast<char>(bytes[i]) != kTensorMagic[i]) throw TensorFileError(i, "bad magic");
  }
  need(4, 4, "version");
  if (detail::get_le(bytes, 4, 4) != kTensorFormatVersion) {
    throw TensorFileError(4, "unsupported format version");
  }
  need(8, 1, "element type");
  if (bytes[8] != kElementBinary64) throw TensorFileError(8, "unsupported element type");
  need(9, 1, "rank");
  const std::size_t rank = bytes[9];

  TensorData t;
  std::size_t at = 10;
  unsigned __int128 count = 1;
  for (std::size_t i = 0; i < rank; ++i, at += 8) {
    need(at, 8, "dims");
    t.dims.push_back(detail::get_le(bytes, at, 8));
    count *= t.dims.back();
    if (count > (bytes.size() / 8) + 1) throw TensorFileError(at, "dims exceed file size");
  }
  const auto payload = static_cast<std::size_t>(count) * 8;
  if (bytes.size() - at != payload) {
    throw TensorFileError(std::min(bytes.size(), at + payload),
                          "payload length " + std::to_string(bytes.size() - at) +
                              " does not match dims (" + std::to_string(payload) + ")");
  }
  t.values.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < t.values.size(); ++i, at += 8) {
    t.values[i] = std::bit_cast<double>(detail::get_le(bytes, at, 8));
  }
  return t;
}

inline void write_tensor_file(const std::filesystem::path& path, const TensorData& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

inline TensorData read_tensor_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

inline TensorData from_tensor3(const Tensor3& t) {
  const auto& s = t.shape();
  return {{s.channels, s.height, s.width}, {t.values().begin(), t.values().end()}};
}

inline TensorData from_matrix(const RealMatrix& m) {
  return {{m.rows(), m.cols()}, m.data()};
}

/// Rank 3 maps directly; rank 2 becomes one channel; rank 1 a single row.
inline Tensor3 to_tensor3(const TensorData& t) {
  Shape3 s;
  switch (t.dims.size()) {
    case 1: s = {1, 1, t.dims[0]}; break;
    case 2: s = {1, t.dims[0], t.dims[1]}; break;
    case 3: s = {t.dims[0], t.dims[1], t.dims[2]}; break;
    default: throw std::domain_error("expected a tensor of rank 1 to 3");
  }
  return Tensor3(s, t.values);
}

/// Rank 2 maps directly; rank 1 is a single row; higher ranks fold to dims[0] x rest.
inline RealMatrix to_matrix(const TensorData& t) {
  if (t.dims.empty()) return RealMatrix(1, 1, t.values);
  if (t.dims.size() == 1) return RealMatrix(1, t.dims[0], t.values);
  const std::size_t rows = t.dims[0];
  return RealMatrix(rows, rows == 0 ? 0 : t.values.size() / rows, t.values);
}

}  // namespace bfpcnn
