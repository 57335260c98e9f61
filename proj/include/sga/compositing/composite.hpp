// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sga/quantizer/image.hpp"

namespace sga {

/// Generated pixels inside the (pixel-level) mask, original pixels elsewhere.
inline ImageGrid composite(const ImageGrid& original, const ImageGrid& generated,
                           const MaskMap& mask) {
  if (!original.same_dims(generated)) throw ShapeError("composite: image dims differ");
  if (mask.height != original.height || mask.width != original.width) {
    throw ShapeError("composite: mask dims differ from image dims");
  }
  ImageGrid out = original;
  const std::size_t c = original.channels;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t ch = 0; ch < c; ++ch) out.pixels[i * c + ch] = generated.pixels[i * c + ch];
  }
  return out;
}

}  // namespace sga
