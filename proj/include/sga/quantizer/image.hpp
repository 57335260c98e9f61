// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sga/core/error.hpp"
#include "sga/sparse/partition.hpp"

namespace sga {

/// H x W image with 1 or more channels, values in [0, 1], interleaved.
struct ImageGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<float> pixels;

  ImageGrid() = default;
  ImageGrid(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  bool same_dims(const ImageGrid& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

/// Per-position boolean mask; true marks an edited position.
struct MaskMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  MaskMap() = default;
  MaskMap(std::size_t h, std::size_t w, bool fill = false)
      : height(h), width(w), bits(h * w, fill ? 1 : 0) {}

  bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) { bits[y * width + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits[i] != 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  bool any() const { return count() > 0; }
  double fraction() const { return bits.empty() ? 0.0 : double(count()) / double(bits.size()); }

  friend bool operator==(const MaskMap&, const MaskMap&) = default;
};

/// Nearest-neighbour expansion of a token-level mask to pixels.
inline MaskMap upsample_mask(const MaskMap& m, std::size_t factor) {
  MaskMap out(m.height * factor, m.width * factor);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) out.set(y, x, m.at(y / factor, x / factor));
  }
  return out;
}

/// A cell of the coarse mask is set if any covered fine position is set.
inline MaskMap downsample_mask_any(const MaskMap& m, std::size_t factor) {
  if (factor == 0 || m.height % factor || m.width % factor) {
    throw ShapeError("downsample_mask: factor does not divide mask dims");
  }
  MaskMap out(m.height / factor, m.width / factor);
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (m.at(y, x)) out.set(y / factor, x / factor, true);
    }
  }
  return out;
}

/// Box-filter downsampling by an integer factor.
inline ImageGrid downsample_image(const ImageGrid& img, std::size_t factor) {
  if (factor == 0 || img.height % factor || img.width % factor) {
    throw ShapeError("downsample_image: factor does not divide image dims");
  }
  ImageGrid out(img.height / factor, img.width / factor, img.channels);
  const float inv = 1.0f / float(factor * factor);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        float acc = 0.0f;
        for (std::size_t a = 0; a < factor; ++a) {
          for (std::size_t b = 0; b < factor; ++b) acc += img.at(y * factor + a, x * factor + b, c);
        }
        out.at(y, x, c) = acc * inv;
      }
    }
  }
  return out;
}

/// Semantic label map -> one-hot channel image.
inline ImageGrid one_hot_labels(const std::vector<std::uint32_t>& labels, std::size_t h,
                                std::size_t w, std::size_t classes) {
  if (labels.size() != h * w) throw ShapeError("one_hot_labels: size mismatch");
  ImageGrid out(h, w, classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw VocabularyError("one_hot_labels: label out of range");
    out.pixels[i * classes + labels[i]] = 1.0f;
  }
  return out;
}

inline ImageGrid to_grayscale(const ImageGrid& img) {
  if (img.channels == 1) return img;
  ImageGrid out(img.height, img.width, 1);
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < img.channels; ++c) acc += img.pixels[i * img.channels + c];
    out.pixels[i] = acc / float(img.channels);
  }
  return out;
}

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace detail

/// Reads binary PGM (P5) or PPM (P6), 8-bit, scaled to [0, 1].
inline ImageGrid read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const std::string magic = detail::next_pnm_token(in);
  std::size_t channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw IoError("unsupported image format in " + path.string() + " (need P5/P6)");
  }
  const std::size_t w = std::stoul(detail::next_pnm_token(in));
  const std::size_t h = std::stoul(detail::next_pnm_token(in));
  const unsigned maxval = std::stoul(detail::next_pnm_token(in));
  if (maxval != 255) throw IoError("only 8-bit PNM images are supported");
  std::vector<unsigned char> raw(w * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IoError("truncated image " + path.string());
  }
  ImageGrid img(h, w, channels);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = float(raw[i]) / 255.0f;
  return img;
}

inline void write_pnm(const std::filesystem::path& path, const ImageGrid& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw IoError("write_pnm: only 1 or 3 channels can be written");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

/// Mask from a PGM: any nonzero pixel is masked.
inline MaskMap read_mask_pgm(const std::filesystem::path& path) {
  const ImageGrid img = read_pnm(path);
  const ImageGrid g = to_grayscale(img);
  MaskMap m(g.height, g.width);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) m.bits[i] = g.pixels[i] > 0.0f ? 1 : 0;
  return m;
}

inline void write_mask_pgm(const std::filesystem::path& path, const MaskMap& m) {
  ImageGrid img(m.height, m.width, 1);
  for (std::size_t i = 0; i < m.bits.size(); ++i) img.pixels[i] = m.bits[i] ? 1.0f : 0.0f;
  write_pnm(path, img);
}

}  // namespace sga
