// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <set>
#include <vector>

#include "sga/quantizer/codebook.hpp"

namespace sga {

/// Image -> H_feat x W_feat x d feature grid.
using FeatureEncoder = std::function<DenseArray(const ImageGrid&)>;

struct LeakageReport {
  std::size_t trials = 0;
  std::vector<std::size_t> changed_positions;  // unmasked token indices, sorted
  std::size_t changed_events = 0;              // summed over trials

  bool clean() const { return changed_positions.empty(); }
};

/// Replaces masked patches with fresh uniform noise `trials` times, re-runs
/// encode -> quantize -> apply_mask, and lists unmasked positions whose token
/// changed relative to the noise-free run.
inline LeakageReport leakage_report(const ImageGrid& image, const MaskMap& mask,
                                    const FeatureEncoder& encoder, const Codebook& codebook,
                                    std::size_t patch, std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw ParameterError("leakage_report: trials must be >= 1");
  if (mask.height * patch != image.height || mask.width * patch != image.width) {
    throw ShapeError("leakage_report: mask does not match image / patch size");
  }
  const TokenGrid reference = apply_mask(quantize(encoder(image), codebook), mask);
  const MaskMap pixel_mask = upsample_mask(mask, patch);
  LeakageReport report;
  report.trials = trials;
  std::set<std::size_t> changed;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    ImageGrid noised = image;
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        if (!pixel_mask.at(y, x)) continue;
        for (std::size_t c = 0; c < image.channels; ++c) {
          noised.at(y, x, c) = static_cast<float>(rng.uniform());
        }
      }
    }
    const TokenGrid tokens = apply_mask(quantize(encoder(noised), codebook), mask);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (mask[i]) continue;
      if (tokens.tokens[i] != reference.tokens[i]) {
        changed.insert(i);
        ++report.changed_events;
      }
    }
  }
  report.changed_positions.assign(changed.begin(), changed.end());
  return report;
}

inline LeakageReport leakage_report(const ImageGrid& image, const MaskMap& mask,
                                    const Codebook& codebook, const DenseArray& projection,
                                    std::size_t patch, std::size_t trials, std::uint64_t seed) {
  FeatureEncoder enc = [&](const ImageGrid& img) { return encode_patches(img, patch, projection); };
  return leakage_report(image, mask, enc, codebook, patch, trials, seed);
}

}  // namespace sga
