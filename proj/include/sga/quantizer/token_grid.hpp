// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sga/core/error.hpp"
#include "sga/quantizer/image.hpp"
#include "sga/sparse/partition.hpp"

namespace sga {

using Token = std::int32_t;

/// Row-major grid of codebook indices. The MASK sentinel is index `vocab`.
struct TokenGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t vocab = 0;
  std::vector<Token> tokens;

  TokenGrid() = default;
  TokenGrid(std::size_t h, std::size_t w, std::size_t vocab_size, Token fill = 0)
      : height(h), width(w), vocab(vocab_size), tokens(h * w, fill) {}

  Token mask_token() const noexcept { return static_cast<Token>(vocab); }
  std::size_t size() const noexcept { return tokens.size(); }
  GridDims dims() const noexcept { return {height, width}; }

  Token at(std::size_t y, std::size_t x) const { return tokens[y * width + x]; }
  Token& at(std::size_t y, std::size_t x) { return tokens[y * width + x]; }

  bool is_mask(std::size_t i) const { return tokens[i] == mask_token(); }
  bool has_mask() const {
    for (auto t : tokens) {
      if (t == mask_token()) return true;
    }
    return false;
  }

  void validate() const {
    if (tokens.size() != height * width) throw ShapeError("token grid size mismatch");
    for (auto t : tokens) {
      if (t < 0 || t > mask_token()) {
        throw VocabularyError("token " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(vocab));
      }
    }
  }

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

/// Replaces masked positions with the MASK sentinel.
inline TokenGrid apply_mask(const TokenGrid& tokens, const MaskMap& mask) {
  if (tokens.height != mask.height || tokens.width != mask.width) {
    throw ShapeError("apply_mask: mask is " + std::to_string(mask.height) + "x" +
                     std::to_string(mask.width) + ", tokens are " + std::to_string(tokens.height) +
                     "x" + std::to_string(tokens.width));
  }
  TokenGrid out = tokens;
  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    if (mask[i]) out.tokens[i] = out.mask_token();
  }
  return out;
}

// JSON form {"h":..,"w":..,"vocab":..,"tokens":[..]}, MASK written as -1.
inline nlohmann::json token_grid_to_json(const TokenGrid& g) {
  std::vector<std::int64_t> toks(g.tokens.size());
  for (std::size_t i = 0; i < toks.size(); ++i) toks[i] = g.is_mask(i) ? -1 : g.tokens[i];
  return nlohmann::json{{"h", g.height}, {"w", g.width}, {"vocab", g.vocab}, {"tokens", toks}};
}

inline TokenGrid token_grid_from_json(const nlohmann::json& j) {
  TokenGrid g(j.at("h").get<std::size_t>(), j.at("w").get<std::size_t>(),
              j.at("vocab").get<std::size_t>());
  const auto toks = j.at("tokens").get<std::vector<std::int64_t>>();
  if (toks.size() != g.height * g.width) throw ShapeError("token grid json: wrong token count");
  for (std::size_t i = 0; i < toks.size(); ++i) {
    g.tokens[i] = toks[i] == -1 ? g.mask_token() : static_cast<Token>(toks[i]);
  }
  g.validate();
  return g;
}

inline void write_token_grid(const std::filesystem::path& path, const TokenGrid& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << token_grid_to_json(g).dump() << "\n";
}

inline TokenGrid read_token_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return token_grid_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad token grid " + path.string() + ": " + e.what());
  }
}

/// Nearest subsampling of a token grid by an integer factor (top-left token
/// of each cell). Used to derive low-resolution grids from token inputs.
inline TokenGrid subsample_tokens(const TokenGrid& g, std::size_t factor) {
  if (factor == 0 || g.height % factor || g.width % factor) {
    throw ShapeError("subsample_tokens: factor does not divide grid dims");
  }
  TokenGrid out(g.height / factor, g.width / factor, g.vocab);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = g.at(y * factor, x * factor);
  }
  return out;
}

}  // namespace sga
