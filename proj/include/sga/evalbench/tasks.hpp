// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>

#include "sga/core/rng.hpp"
#include "sga/evalbench/masks.hpp"
#include "sga/quantizer/token_grid.hpp"

namespace sga {

enum class TaskKind { mirror, constant_region, copy_corner };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::mirror: return "mirror";
    case TaskKind::constant_region: return "constant-region";
    case TaskKind::copy_corner: return "copy-corner";
  }
  return "?";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "mirror") return TaskKind::mirror;
  if (s == "constant-region") return TaskKind::constant_region;
  if (s == "copy-corner") return TaskKind::copy_corner;
  throw ConfigError("unknown task '" + s + "'");
}

/// Synthetic token-grid generator.
///  - mirror: bottom half is the vertical reflection of a random top half.
///  - constant-region: one random rectangle holds a single token.
///  - copy-corner: the bottom-right q x q corner repeats the top-left one,
///    q = max(1, H/4).
struct SyntheticTask {
  TaskKind kind = TaskKind::mirror;
  GridDims grid{8, 8};
  std::size_t vocab = 16;
  std::size_t map_vocab = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (grid.height < 2 || grid.width < 2) throw ConfigError("task: grid must be at least 2x2");
    if (kind == TaskKind::mirror && grid.height % 2 != 0) {
      throw ConfigError("task: mirror needs an even grid height");
    }
    if (vocab < 2) throw ConfigError("task: vocab must be >= 2");
    if (map_vocab < 2) throw ConfigError("task: map_vocab must be >= 2");
  }

  std::size_t corner() const { return std::max<std::size_t>(1, grid.height / 4); }
};

/// One generated instance: ground-truth tokens, semantic map, and the cells
/// a training or evaluation mask may cover.
struct TaskSample {
  TokenGrid image;
  TokenGrid semantic;
  MaskMap maskable;
};

inline TaskSample generate_sample(const SyntheticTask& task, Rng& rng) {
  task.validate();
  const std::size_t H = task.grid.height, W = task.grid.width;
  TaskSample s{TokenGrid(H, W, task.vocab), TokenGrid(H, W, task.map_vocab), MaskMap(H, W)};
  auto random_token = [&] { return static_cast<Token>(rng.below(task.vocab)); };
  for (auto& t : s.image.tokens) t = random_token();
  switch (task.kind) {
    case TaskKind::mirror:
      for (std::size_t i = H / 2; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          s.image.at(i, j) = s.image.at(H - 1 - i, j);
          s.semantic.at(i, j) = 1;
          s.maskable.set(i, j, true);
        }
      }
      break;
    case TaskKind::constant_region: {
      const std::size_t rh = 1 + rng.below(H / 2 + 1), rw = 1 + rng.below(W / 2 + 1);
      const std::size_t y0 = rng.below(H - rh + 1), x0 = rng.below(W - rw + 1);
      const Token c = random_token();
      for (std::size_t i = y0; i < y0 + rh; ++i) {
        for (std::size_t j = x0; j < x0 + rw; ++j) {
          s.image.at(i, j) = c;
          s.semantic.at(i, j) = 1;
          s.maskable.set(i, j, true);
        }
      }
      break;
    }
    case TaskKind::copy_corner: {
      const std::size_t q = task.corner();
      for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
          s.image.at(H - q + i, W - q + j) = s.image.at(i, j);
          s.semantic.at(H - q + i, W - q + j) = 1;
          s.maskable.set(H - q + i, W - q + j, true);
        }
      }
      break;
    }
  }
  return s;
}

/// Exact check of the task's defining constraint.
inline bool satisfies_task(const SyntheticTask& task, const TaskSample& s) {
  const std::size_t H = task.grid.height, W = task.grid.width;
  if (s.image.height != H || s.image.width != W) return false;
  switch (task.kind) {
    case TaskKind::mirror:
      for (std::size_t i = 0; i < H / 2; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          if (s.image.at(H - 1 - i, j) != s.image.at(i, j)) return false;
        }
      }
      return true;
    case TaskKind::constant_region: {
      Token c = -1;
      for (std::size_t i = 0; i < s.image.size(); ++i) {
        if (!s.maskable[i]) continue;
        if (c < 0) c = s.image.tokens[i];
        if (s.image.tokens[i] != c) return false;
      }
      return c >= 0;
    }
    case TaskKind::copy_corner: {
      const std::size_t q = task.corner();
      for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
          if (s.image.at(H - q + i, W - q + j) != s.image.at(i, j)) return false;
        }
      }
      return true;
    }
  }
  return false;
}

/// Training / evaluation instance: a sample plus a free-form mask inside its
/// maskable region.
struct TrainExample {
  TokenGrid target;
  TokenGrid semantic;
  MaskMap mask;
};

inline TrainExample sample_example(const SyntheticTask& task, Rng& rng) {
  TaskSample s = generate_sample(task, rng);
  MaskMap mask = free_form_mask_within(s.maskable, rng.next());
  return {std::move(s.image), std::move(s.semantic), std::move(mask)};
}

}  // namespace sga
