// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "sga/core/rng.hpp"
#include "sga/quantizer/image.hpp"

namespace sga {

inline constexpr double kMaskMinFraction = 0.1;
inline constexpr double kMaskMaxFraction = 0.6;

/// Random-brush free-form mask. A seeded walk moves in one of 8 directions
/// per step (a diagonal is taken as two axis steps, so consecutive brush
/// centres stay 4-adjacent) and stamps a disk of radius 1..3 at every
/// centre. Disk cells are added nearest-first, which keeps the union
/// 4-connected even when the area cap cuts a disk short. The masked fraction
/// always lands in [0.1, 0.6].
inline MaskMap free_form_mask(GridDims dims, std::uint64_t seed) {
  if (dims.height < 2 || dims.width < 2) {
    throw ShapeError("free_form_mask: grid must be at least 2x2");
  }
  Rng rng(seed);
  const std::size_t area = dims.size();
  const auto min_cells = static_cast<std::size_t>(std::ceil(kMaskMinFraction * double(area)));
  const auto max_cells = static_cast<std::size_t>(std::floor(kMaskMaxFraction * double(area)));
  const std::size_t target_steps = 1 + area / 8 + rng.below(area / 8 + 1);

  MaskMap m(dims.height, dims.width);
  std::size_t count = 0;
  auto h = static_cast<std::ptrdiff_t>(dims.height);
  auto w = static_cast<std::ptrdiff_t>(dims.width);
  std::ptrdiff_t y = static_cast<std::ptrdiff_t>(rng.below(dims.height));
  std::ptrdiff_t x = static_cast<std::ptrdiff_t>(rng.below(dims.width));

  auto stamp = [&](std::ptrdiff_t cy, std::ptrdiff_t cx, std::ptrdiff_t r) {
    std::vector<std::pair<std::ptrdiff_t, std::pair<std::ptrdiff_t, std::ptrdiff_t>>> cells;
    for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
      for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
        const std::ptrdiff_t d2 = dy * dy + dx * dx;
        if (d2 > r * r) continue;
        const std::ptrdiff_t yy = cy + dy, xx = cx + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        cells.push_back({d2, {yy, xx}});
      }
    }
    std::stable_sort(cells.begin(), cells.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& c : cells) {
      if (count >= max_cells) return;
      const auto [yy, xx] = c.second;
      if (!m.at(yy, xx)) {
        m.set(yy, xx, true);
        ++count;
      }
    }
  };

  static constexpr std::array<std::pair<int, int>, 8> kDirs = {
      {{-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};
  auto radius = [&] { return static_cast<std::ptrdiff_t>(1 + rng.below(3)); };
  auto clamp_step = [](std::ptrdiff_t v, int d, std::ptrdiff_t n) {
    const std::ptrdiff_t nv = v + d;
    return (nv < 0 || nv >= n) ? v - d : nv;  // bounce off the border
  };

  stamp(y, x, radius());
  std::size_t steps = 0;
  while (count < max_cells && (steps < target_steps || count < min_cells)) {
    const auto [dy, dx] = kDirs[rng.below(kDirs.size())];
    const std::ptrdiff_t r = radius();
    if (dy != 0) {
      y = clamp_step(y, dy, h);
      stamp(y, x, r);
    }
    if (dx != 0) {
      x = clamp_step(x, dx, w);
      stamp(y, x, r);
    }
    ++steps;
  }
  return m;
}

/// Free-form mask confined to the cells where `allowed` is set: the walk
/// runs on the bounding box of the allowed cells and is clipped to them.
/// At least one allowed cell is always masked.
inline MaskMap free_form_mask_within(const MaskMap& allowed, std::uint64_t seed) {
  std::size_t y0 = allowed.height, y1 = 0, x0 = allowed.width, x1 = 0;
  for (std::size_t y = 0; y < allowed.height; ++y) {
    for (std::size_t x = 0; x < allowed.width; ++x) {
      if (!allowed.at(y, x)) continue;
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
  }
  MaskMap out(allowed.height, allowed.width);
  if (y0 > y1) return out;
  const GridDims box{std::max<std::size_t>(2, y1 - y0 + 1), std::max<std::size_t>(2, x1 - x0 + 1)};
  const MaskMap local = free_form_mask(box, seed);
  for (std::size_t y = 0; y < box.height; ++y) {
    for (std::size_t x = 0; x < box.width; ++x) {
      const std::size_t gy = y0 + y, gx = x0 + x;
      if (gy < allowed.height && gx < allowed.width && local.at(y, x) && allowed.at(gy, gx)) {
        out.set(gy, gx, true);
      }
    }
  }
  if (!out.any()) {
    Rng rng(derive_seed(seed, "fallback"));
    std::vector<std::size_t> cells;
    for (std::size_t i = 0; i < allowed.bits.size(); ++i) {
      if (allowed[i]) cells.push_back(i);
    }
    out.bits[cells[rng.below(cells.size())]] = 1;
  }
  return out;
}

}  // namespace sga
