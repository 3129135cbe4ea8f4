#pragma once

// Raw tensor container shared by dataset manifests and checkpoints.
//
// Layout (little-endian):
//   bytes 0..3   magic "MMDA"
//   byte  4      rank
//   byte  5      dtype tag (DType)
//   bytes 6..7   reserved, zero
//   then rank x u32 dimensions, then the packed row-major payload.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mmda/error.hpp"

namespace mmda {

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

inline constexpr std::array<char, 4> kTensorMagic = {'M', 'M', 'D', 'A'};

struct RawTensor {
  DType dtype = DType::kFloat32;
  std::vector<std::uint32_t> dims;
  // Float32 payloads are widened on read; values written back as float32 are
  // exact because they originated as float32.
  std::vector<double> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

inline std::size_t tensor_header_bytes(std::size_t rank) { return 8 + 4 * rank; }

inline void write_tensor(std::ostream& out, const RawTensor& t) {
  if (t.dims.size() > 255) throw ShapeError("tensor rank exceeds 255");
  if (t.element_count() != t.values.size()) {
    throw ShapeError("tensor payload size does not match its dimensions");
  }
  out.write(kTensorMagic.data(), 4);
  const std::uint8_t rank = static_cast<std::uint8_t>(t.dims.size());
  const std::uint8_t tag = static_cast<std::uint8_t>(t.dtype);
  const std::uint16_t reserved = 0;
  out.write(reinterpret_cast<const char*>(&rank), 1);
  out.write(reinterpret_cast<const char*>(&tag), 1);
  out.write(reinterpret_cast<const char*>(&reserved), 2);
  out.write(reinterpret_cast<const char*>(t.dims.data()),
            static_cast<std::streamsize>(4 * t.dims.size()));
  if (t.dtype == DType::kFloat32) {
    std::vector<float> narrow(t.values.begin(), t.values.end());
    out.write(reinterpret_cast<const char*>(narrow.data()),
              static_cast<std::streamsize>(4 * narrow.size()));
  } else {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(8 * t.values.size()));
  }
  if (!out) throw IoError("failed writing tensor payload");
}

inline RawTensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kTensorMagic) throw IoError("bad tensor magic");
  std::uint8_t rank = 0, tag = 0;
  std::uint16_t reserved = 0;
  in.read(reinterpret_cast<char*>(&rank), 1);
  in.read(reinterpret_cast<char*>(&tag), 1);
  in.read(reinterpret_cast<char*>(&reserved), 2);
  if (!in) throw IoError("truncated tensor header");
  if (tag > 1) throw IoError("unknown tensor dtype tag " + std::to_string(tag));
  RawTensor t;
  t.dtype = static_cast<DType>(tag);
  t.dims.resize(rank);
  in.read(reinterpret_cast<char*>(t.dims.data()), 4 * static_cast<std::streamsize>(rank));
  if (!in) throw IoError("truncated tensor dimensions");
  const std::size_t n = t.element_count();
  t.values.resize(n);
  if (t.dtype == DType::kFloat32) {
    std::vector<float> narrow(n);
    in.read(reinterpret_cast<char*>(narrow.data()), static_cast<std::streamsize>(4 * n));
    std::copy(narrow.begin(), narrow.end(), t.values.begin());
  } else {
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(8 * n));
  }
  if (!in) throw IoError("truncated tensor payload");
  return t;
}

inline void write_tensor_file(const std::string& path, const RawTensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_tensor(out, t);
}

inline RawTensor read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return read_tensor(in);
}

}  // namespace mmda
