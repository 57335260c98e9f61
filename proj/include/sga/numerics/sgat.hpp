// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sga/numerics/dense_array.hpp"

namespace sga {

// "SGAT" | u32 LE header length | JSON header {"dtype":"f32","shape":[...]} |
// row-major little-endian f32 payload.
inline constexpr char kSgatMagic[4] = {'S', 'G', 'A', 'T'};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

}  // namespace detail

inline std::string encode_sgat(const DenseArray& a) {
  const nlohmann::json header = {{"dtype", "f32"}, {"shape", a.shape()}};
  const std::string h = header.dump();
  std::string out(kSgatMagic, 4);
  detail::put_u32_le(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  out.reserve(out.size() + a.size() * 4);
  for (float v : a.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    detail::put_u32_le(out, bits);
  }
  return out;
}

inline DenseArray decode_sgat(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSgatMagic, 4) != 0) {
    throw IoError("sgat: bad magic");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t hlen = detail::get_u32_le(p + 4);
  if (bytes.size() < 8ull + hlen) throw IoError("sgat: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("sgat: bad header: ") + e.what());
  }
  if (header.value("dtype", "") != "f32") throw IoError("sgat: unsupported dtype");
  const Shape shape = header.at("shape").get<Shape>();
  const std::size_t n = shape_size(shape);
  if (bytes.size() != 8ull + hlen + 4ull * n) throw IoError("sgat: payload length mismatch");
  std::vector<float> data(n);
  const unsigned char* payload = p + 8 + hlen;
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std::bit_cast<float>(detail::get_u32_le(payload + 4 * i));
  }
  return DenseArray(shape, std::move(data));
}

inline void write_sgat(const std::filesystem::path& path, const DenseArray& a) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("sgat: cannot write " + path.string());
  const std::string bytes = encode_sgat(a);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("sgat: write failed for " + path.string());
}

inline DenseArray read_sgat(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("sgat: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_sgat(bytes);
}

}  // namespace sga
