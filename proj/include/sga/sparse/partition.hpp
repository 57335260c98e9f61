// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sga/core/error.hpp"
#include "sga/numerics/ops.hpp"

namespace sga {

struct GridDims {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const noexcept { return height * width; }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

enum class PartitionMode { contiguous_1d, tile_2d };

inline std::string to_string(PartitionMode m) {
  return m == PartitionMode::contiguous_1d ? "contiguous-1d" : "tile-2d";
}

inline PartitionMode partition_mode_from_string(const std::string& s) {
  if (s == "contiguous-1d") return PartitionMode::contiguous_1d;
  if (s == "tile-2d") return PartitionMode::tile_2d;
  throw ConfigError("unknown partition mode '" + s + "'");
}

/// Non-overlapping, equal-size blocks covering a token sequence of length L.
class BlockPartition {
 public:
  BlockPartition() = default;

  /// Token l goes to block floor(l * N / L).
  static BlockPartition contiguous(std::size_t length, std::size_t blocks,
                                   std::optional<GridDims> grid = std::nullopt) {
    if (blocks == 0 || length == 0 || length % blocks != 0) {
      throw ShapeError("partition: N=" + std::to_string(blocks) +
                       " does not divide L=" + std::to_string(length));
    }
    if (grid && grid->size() != length) {
      throw ShapeError("partition: grid dims do not match sequence length");
    }
    BlockPartition p;
    p.length_ = length;
    p.mode_ = PartitionMode::contiguous_1d;
    p.grid_ = grid;
    const std::size_t bs = length / blocks;
    p.block_of_.resize(length);
    p.tokens_.assign(blocks, {});
    for (std::size_t l = 0; l < length; ++l) {
      p.block_of_[l] = l / bs;
      p.tokens_[l / bs].push_back(l);
    }
    // Sub-grid each block covers on the token grid, used by the positional conv.
    p.region_h_ = 1;
    p.region_w_ = bs;
    if (grid) {
      if (bs % grid->width == 0) {
        p.region_h_ = bs / grid->width;
        p.region_w_ = grid->width;
      }
    }
    return p;
  }

  /// 2D tiles over an H x W grid, arranged as block_rows x block_cols tiles.
  static BlockPartition tiles(GridDims grid, std::size_t block_rows, std::size_t block_cols) {
    if (block_rows == 0 || block_cols == 0 || grid.height % block_rows != 0 ||
        grid.width % block_cols != 0) {
      throw ShapeError("partition: tile grid " + std::to_string(block_rows) + "x" +
                       std::to_string(block_cols) + " does not divide feature grid " +
                       std::to_string(grid.height) + "x" + std::to_string(grid.width));
    }
    BlockPartition p;
    p.length_ = grid.size();
    p.mode_ = PartitionMode::tile_2d;
    p.grid_ = grid;
    p.region_h_ = grid.height / block_rows;
    p.region_w_ = grid.width / block_cols;
    p.block_of_.resize(p.length_);
    p.tokens_.assign(block_rows * block_cols, {});
    for (std::size_t i = 0; i < grid.height; ++i) {
      for (std::size_t j = 0; j < grid.width; ++j) {
        const std::size_t b = (i / p.region_h_) * block_cols + j / p.region_w_;
        const std::size_t l = i * grid.width + j;
        p.block_of_[l] = b;
        p.tokens_[b].push_back(l);
      }
    }
    return p;
  }

  std::size_t length() const noexcept { return length_; }
  std::size_t blocks() const noexcept { return tokens_.size(); }
  std::size_t block_size() const noexcept { return length_ / tokens_.size(); }
  PartitionMode mode() const noexcept { return mode_; }
  const std::optional<GridDims>& grid() const noexcept { return grid_; }

  std::size_t block_of(std::size_t token) const { return block_of_.at(token); }
  const std::vector<std::size_t>& tokens(std::size_t block) const { return tokens_.at(block); }

  /// Each block as an independent rectangle for the block-local positional conv.
  std::vector<PegRegion> peg_regions() const {
    std::vector<PegRegion> out;
    out.reserve(tokens_.size());
    for (const auto& t : tokens_) out.push_back(PegRegion{region_h_, region_w_, t});
    return out;
  }

 private:
  std::size_t length_ = 0;
  PartitionMode mode_ = PartitionMode::contiguous_1d;
  std::optional<GridDims> grid_;
  std::size_t region_h_ = 0;
  std::size_t region_w_ = 0;
  std::vector<std::size_t> block_of_;
  std::vector<std::vector<std::size_t>> tokens_;
};

/// Builds a partition of L tokens into N blocks. Tile mode needs the feature
/// grid; the tile arrangement defaults to sqrt(N) x sqrt(N).
inline BlockPartition partition(std::size_t length, std::size_t blocks, PartitionMode mode,
                                std::optional<GridDims> grid = std::nullopt,
                                std::optional<GridDims> tile_grid = std::nullopt) {
  if (mode == PartitionMode::contiguous_1d) {
    return BlockPartition::contiguous(length, blocks, grid);
  }
  if (!grid || grid->size() != length) {
    throw ShapeError("partition: tile-2d mode needs grid dims matching L");
  }
  if (blocks == 0 || length % blocks != 0) {
    throw ShapeError("partition: N does not divide L");
  }
  GridDims tg;
  if (tile_grid) {
    tg = *tile_grid;
  } else {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(blocks))));
    if (side * side != blocks) {
      throw ShapeError("partition: tile-2d default needs a square block count");
    }
    tg = {side, side};
  }
  if (tg.size() != blocks) throw ShapeError("partition: tile grid does not have N tiles");
  return BlockPartition::tiles(*grid, tg.height, tg.width);
}

}  // namespace sga
