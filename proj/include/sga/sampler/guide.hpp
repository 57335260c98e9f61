// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>

#include "sga/sampler/edit.hpp"

namespace sga {

/// Pools every (layer, head) attention map into block affinities over
/// `part` and selects neighbourhood + top-K plans.
template <std::floating_point T>
ModelPlans plans_from_maps(const LayerMaps<T>& enc_self, const LayerMaps<T>& dec_self,
                           const LayerMaps<T>& dec_cross, const BlockPartition& query_part,
                           const BlockPartition& key_part, std::size_t k, std::size_t radius) {
  auto site = [&](const LayerMaps<T>& maps) {
    std::vector<std::vector<SparsityPlan>> out(maps.size());
    for (std::size_t l = 0; l < maps.size(); ++l) {
      for (std::size_t h = 0; h < maps[l].size(); ++h) {
        SparsityPlan p = select_plan(block_affinity(maps[l][h], query_part, key_part), k, radius);
        p.layer = l;
        p.head = h;
        p.provenance = PlanKind::guided;
        out[l].push_back(std::move(p));
      }
    }
    return out;
  };
  return {site(enc_self), site(dec_self), site(dec_cross)};
}

struct GuideResult {
  TokenGrid completion;  // low-resolution completed tokens
  ModelPlans plans;
  double seconds = 0.0;
};

/// Low-resolution guiding pass: complete the masked low-res tokens with the
/// dense guide (top-k, dedicated sub-seed), run one forced pass over the
/// completion to collect full attention maps, then pool and select plans
/// with the block count, K and radius of `plan_cfg`.
template <std::floating_point T>
GuideResult guide_and_plan(const TokenGrid& image_low, const TokenGrid& semantic_low,
                           const MaskMap& mask_low, const ModelWeights<T>& guide,
                           const ModelConfig& plan_cfg, const SamplingOptions& sampling) {
  const auto t0 = std::chrono::steady_clock::now();
  if (guide.config.blocks != plan_cfg.blocks) {
    throw ConfigError("guide_and_plan: guide and target block counts differ");
  }
  SamplingOptions one = sampling;
  one.n_samples = 1;
  one.n_keep = 1;
  one.k = std::min(sampling.k, guide.config.vocab);
  one.seed = derive_seed(sampling.seed, "guide-sample");
  const CandidateSet done = autoregressive_edit(image_low, semantic_low, mask_low, guide, nullptr, one);
  GuideResult res;
  res.completion = done.items.at(0).tokens;
  const auto maps = guiding_forward(apply_mask(image_low, mask_low), semantic_low,
                                    decoder_inputs(res.completion, guide.config), guide);
  const auto geo = make_geometry(guide.config, guide.grid);
  res.plans = plans_from_maps(maps.enc_maps, maps.dec_self_maps, maps.dec_cross_maps, *geo.part,
                              *geo.part, plan_cfg.k, plan_cfg.radius);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace sga
