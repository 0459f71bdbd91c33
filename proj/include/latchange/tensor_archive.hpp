#pragma once

// Tensor archive layout:
//   8 bytes   magic "ACTENSR1"
//   4 bytes   little-endian uint32 header length L
//   L bytes   UTF-8 JSON header {"dtype":"f32","layout":"row-major","shape":[H,W,C]}
//   payload   product(shape) little-endian float32 scalars

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latchange/error.hpp"
#include "latchange/grid.hpp"

namespace latchange {

inline constexpr std::array<char, 8> kTensorMagic = {'A', 'C', 'T', 'E', 'N', 'S', 'R', '1'};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }

}  // namespace detail

/// Serializes a grid to the archive byte layout.
inline std::string encode_tensor_archive(const EmbeddingGrid& grid) {
  if (!grid.all_finite()) {
    throw Error(ErrorKind::invalid_argument, "non-finite values cannot be archived");
  }
  const nlohmann::json header = {
      {"shape", {grid.height(), grid.width(), grid.channels()}},
      {"dtype", "f32"},
      {"layout", "row-major"},
  };
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(kTensorMagic.size() + 4 + header_text.size() + grid.values().size() * 4);
  out.append(kTensorMagic.data(), kTensorMagic.size());
  detail::put_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  for (float v : grid.values()) detail::put_u32_le(out, detail::float_bits(v));
  return out;
}

inline EmbeddingGrid decode_tensor_archive(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kTensorMagic.size() ||
      std::memcmp(p, kTensorMagic.data(), kTensorMagic.size()) != 0) {
    throw Error(ErrorKind::format, "not a tensor archive (magic mismatch)");
  }
  if (bytes.size() < kTensorMagic.size() + 4) {
    throw Error(ErrorKind::truncated, "tensor archive ends inside the header length");
  }
  const std::size_t header_len = detail::get_u32_le(p + kTensorMagic.size());
  const std::size_t header_begin = kTensorMagic.size() + 4;
  if (bytes.size() < header_begin + header_len) {
    throw Error(ErrorKind::truncated, "tensor archive ends inside the header");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_begin),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(header_begin + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("unreadable tensor header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("shape") || !header["shape"].is_array()) {
    throw Error(ErrorKind::format, "tensor header lacks a shape");
  }
  const std::string dtype = header.value("dtype", "");
  if (dtype != "f32") {
    throw Error(ErrorKind::unsupported, "unsupported dtype '" + dtype + "'");
  }
  if (header.value("layout", "row-major") != "row-major") {
    throw Error(ErrorKind::unsupported, "unsupported layout");
  }
  const auto& shape_json = header["shape"];
  if (shape_json.size() != 3) {
    throw Error(ErrorKind::format, "embedding grids must have rank 3, got rank " +
                                       std::to_string(shape_json.size()));
  }
  std::array<long long, 3> dims{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!shape_json[i].is_number_integer() || shape_json[i].get<long long>() <= 0) {
      throw Error(ErrorKind::format, "shape entries must be positive integers");
    }
    dims[i] = shape_json[i].get<long long>();
  }
  const GridShape shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])};

  const std::size_t payload_begin = header_begin + header_len;
  const std::size_t expected = shape.scalars() * 4;
  if (bytes.size() - payload_begin < expected) {
    throw Error(ErrorKind::truncated, "payload holds " + std::to_string(bytes.size() - payload_begin) +
                                          " bytes, shape needs " + std::to_string(expected));
  }
  if (bytes.size() - payload_begin > expected) {
    throw Error(ErrorKind::format, "trailing bytes after tensor payload");
  }
  std::vector<float> values(shape.scalars());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(detail::get_u32_le(p + payload_begin + 4 * i));
  }
  EmbeddingGrid grid(shape, std::move(values));
  if (!grid.all_finite()) throw Error(ErrorKind::format, "tensor archive contains non-finite values");
  return grid;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

inline void write_tensor_archive(const EmbeddingGrid& grid, const std::filesystem::path& destination) {
  write_file_bytes(destination, encode_tensor_archive(grid));
}

inline EmbeddingGrid read_tensor_archive(const std::filesystem::path& source) {
  return decode_tensor_archive(read_file_bytes(source));
}

}  // namespace latchange
