// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "sga/core/error.hpp"
#include "sga/sparse/partition.hpp"

namespace sga {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t layers_enc = 2;
  std::size_t layers_dec = 2;
  std::size_t vocab = 16;      // |Z|
  std::size_t map_vocab = 8;   // semantic label vocabulary
  std::size_t ff_width = 0;    // 0 means 4 * d
  std::size_t blocks = 64;     // N
  std::size_t k = 3;           // top-K blocks outside the neighborhood
  std::size_t radius = 1;
  PartitionMode partition = PartitionMode::contiguous_1d;
  GridDims low{16, 16};
  GridDims high{64, 64};

  std::size_t head_dim() const { return d / heads; }
  std::size_t ff() const { return ff_width == 0 ? 4 * d : ff_width; }
  std::size_t mask_token() const { return vocab; }
  std::size_t start_token() const { return vocab + 1; }

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) {
      throw ConfigError("model: heads=" + std::to_string(heads) + " must divide d=" +
                        std::to_string(d));
    }
    if (vocab < 2) throw ConfigError("model: vocab must be >= 2");
    if (map_vocab < 1) throw ConfigError("model: map_vocab must be >= 1");
    if (blocks == 0) throw ConfigError("model: blocks must be >= 1");
    for (const auto& g : {low, high}) {
      if (g.size() == 0 || g.size() % blocks != 0) {
        throw ConfigError("model: N=" + std::to_string(blocks) + " must divide L=" +
                          std::to_string(g.size()));
      }
    }
  }
};

inline nlohmann::json grid_to_json(const GridDims& g) { return {{"h", g.height}, {"w", g.width}}; }

inline GridDims grid_from_json(const nlohmann::json& j) {
  return {j.at("h").get<std::size_t>(), j.at("w").get<std::size_t>()};
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"heads", c.heads},
          {"layers_enc", c.layers_enc},
          {"layers_dec", c.layers_dec},
          {"vocab", c.vocab},
          {"map_vocab", c.map_vocab},
          {"ff_width", c.ff()},
          {"blocks", c.blocks},
          {"k", c.k},
          {"radius", c.radius},
          {"partition", to_string(c.partition)},
          {"low", grid_to_json(c.low)},
          {"high", grid_to_json(c.high)}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "d") c.d = v.get<std::size_t>();
      else if (key == "heads") c.heads = v.get<std::size_t>();
      else if (key == "layers_enc") c.layers_enc = v.get<std::size_t>();
      else if (key == "layers_dec") c.layers_dec = v.get<std::size_t>();
      else if (key == "vocab") c.vocab = v.get<std::size_t>();
      else if (key == "map_vocab") c.map_vocab = v.get<std::size_t>();
      else if (key == "ff_width") c.ff_width = v.get<std::size_t>();
      else if (key == "blocks") c.blocks = v.get<std::size_t>();
      else if (key == "k") c.k = v.get<std::size_t>();
      else if (key == "radius") c.radius = v.get<std::size_t>();
      else if (key == "partition") c.partition = partition_mode_from_string(v.get<std::string>());
      else if (key == "low") c.low = grid_from_json(v);
      else if (key == "high") c.high = grid_from_json(v);
      else throw ConfigError("model: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model." + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

}  // namespace sga
