// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sga/sampler/edit.hpp"

namespace sga {

/// Mean pairwise Hamming distance between candidates, restricted to masked
/// positions and normalised to [0, 1]. A token-level diversity statistic; it
/// is not comparable to perceptual diversity scores.
inline double hamming_diversity(const CandidateSet& set, const MaskMap& mask) {
  const std::size_t m = mask.count();
  if (set.items.size() < 2 || m == 0) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < set.items.size(); ++a) {
    for (std::size_t b = a + 1; b < set.items.size(); ++b) {
      std::size_t diff = 0;
      for (std::size_t i = 0; i < mask.bits.size(); ++i) {
        if (mask[i] && set.items[a].tokens.tokens[i] != set.items[b].tokens.tokens[i]) ++diff;
      }
      total += double(diff) / double(m);
      ++pairs;
    }
  }
  return total / double(pairs);
}

}  // namespace sga
