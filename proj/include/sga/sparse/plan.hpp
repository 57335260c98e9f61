// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "sga/attention/mask.hpp"
#include "sga/core/rng.hpp"
#include "sga/numerics/ops.hpp"
#include "sga/sparse/partition.hpp"

namespace sga {

enum class PlanKind { guided, local, sliding, random, global, full, oracle };

inline std::string to_string(PlanKind k) {
  switch (k) {
    case PlanKind::guided: return "guided";
    case PlanKind::local: return "local";
    case PlanKind::sliding: return "sliding";
    case PlanKind::random: return "random";
    case PlanKind::global: return "global";
    case PlanKind::full: return "full";
    case PlanKind::oracle: return "oracle";
  }
  return "unknown";
}

inline PlanKind plan_kind_from_string(const std::string& s) {
  for (auto k : {PlanKind::guided, PlanKind::local, PlanKind::sliding, PlanKind::random,
                 PlanKind::global, PlanKind::full, PlanKind::oracle}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown plan kind '" + s + "'");
}

/// N x N mean attention between token blocks.
template <std::floating_point T>
struct BlockAffinity {
  Array<T> matrix;
  std::size_t blocks() const { return matrix.rows(); }
};

/// Pools a dense low-resolution attention map into block affinities with a
/// kernel = stride = L_low / N average pool (contiguous blocks).
template <std::floating_point T>
BlockAffinity<T> block_affinity(const Array<T>& a_low, std::size_t blocks) {
  if (a_low.rank() != 2 || a_low.rows() != a_low.cols()) {
    throw ShapeError("block_affinity: attention map must be square");
  }
  if (blocks == 0 || a_low.rows() % blocks != 0) {
    throw ShapeError("block_affinity: N=" + std::to_string(blocks) +
                     " gives a non-integral kernel for L=" + std::to_string(a_low.rows()));
  }
  return {avg_pool_matrix(a_low, a_low.rows() / blocks)};
}

/// Block means over arbitrary (query, key) partitions of a possibly
/// rectangular map; reduces to block_affinity for contiguous square cases.
template <std::floating_point T>
BlockAffinity<T> block_affinity(const Array<T>& a_low, const BlockPartition& query_blocks,
                                const BlockPartition& key_blocks) {
  if (a_low.rank() != 2 || a_low.rows() != query_blocks.length() ||
      a_low.cols() != key_blocks.length()) {
    throw ShapeError("block_affinity: map does not match partitions");
  }
  if (query_blocks.blocks() != key_blocks.blocks()) {
    throw ShapeError("block_affinity: query and key block counts differ");
  }
  const std::size_t n = query_blocks.blocks();
  Array<T> b({n, n});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t t = 0; t < n; ++t) {
      double acc = 0.0;
      for (auto i : query_blocks.tokens(r)) {
        for (auto j : key_blocks.tokens(t)) acc += a_low(i, j);
      }
      b(r, t) = static_cast<T>(acc / double(query_blocks.tokens(r).size() *
                                            key_blocks.tokens(t).size()));
    }
  }
  return {std::move(b)};
}

/// For one (layer, head): the key blocks each query block may attend to.
struct SparsityPlan {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t blocks = 0;
  std::size_t radius = 1;
  std::size_t k = 0;
  PlanKind provenance = PlanKind::guided;
  std::vector<std::vector<std::size_t>> kept;  // sorted ascending per query block

  std::size_t kept_total() const {
    std::size_t n = 0;
    for (const auto& k : kept) n += k.size();
    return n;
  }

  bool keeps(std::size_t query_block, std::size_t key_block) const {
    const auto& ks = kept[query_block];
    return std::binary_search(ks.begin(), ks.end(), key_block);
  }

  friend bool operator==(const SparsityPlan&, const SparsityPlan&) = default;
};

inline std::vector<std::size_t> neighborhood(std::size_t r, std::size_t radius, std::size_t n) {
  std::vector<std::size_t> out;
  const std::size_t lo = r >= radius ? r - radius : 0;
  const std::size_t hi = std::min(n - 1, r + radius);
  for (std::size_t t = lo; t <= hi; ++t) out.push_back(t);
  return out;
}

/// kept(r) = N(r) union K(r): the clipped radius neighbourhood plus the k
/// highest-affinity blocks outside it. Ties go to the lower block index.
template <std::floating_point T>
SparsityPlan select_plan(const BlockAffinity<T>& b, std::size_t k, std::size_t radius) {
  const std::size_t n = b.blocks();
  if (b.matrix.rank() != 2 || b.matrix.cols() != n) {
    throw ShapeError("select_plan: affinity must be N x N");
  }
  SparsityPlan plan;
  plan.blocks = n;
  plan.radius = radius;
  plan.k = k;
  plan.provenance = PlanKind::guided;
  plan.kept.resize(n);
  std::vector<std::size_t> candidates;
  for (std::size_t r = 0; r < n; ++r) {
    auto kept = neighborhood(r, radius, n);
    candidates.clear();
    for (std::size_t t = 0; t < n; ++t) {
      if (t + radius < r || t > r + radius) candidates.push_back(t);
    }
    const std::size_t take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + take, candidates.end(),
                      [&](std::size_t x, std::size_t y) {
                        const T bx = b.matrix(r, x);
                        const T by = b.matrix(r, y);
                        return bx != by ? bx > by : x < y;
                      });
    kept.insert(kept.end(), candidates.begin(), candidates.begin() + take);
    std::sort(kept.begin(), kept.end());
    plan.kept[r] = std::move(kept);
  }
  return plan;
}

inline SparsityPlan full_plan(std::size_t blocks) {
  SparsityPlan plan;
  plan.blocks = blocks;
  plan.radius = blocks;
  plan.k = 0;
  plan.provenance = PlanKind::full;
  plan.kept.assign(blocks, {});
  for (auto& ks : plan.kept) {
    ks.resize(blocks);
    std::iota(ks.begin(), ks.end(), std::size_t{0});
  }
  return plan;
}

/// Kept fraction of the N x N block grid.
inline double sparsity_ratio(const SparsityPlan& plan) {
  return double(plan.kept_total()) / double(plan.blocks * plan.blocks);
}

/// Checks the invariants that hold for neighbourhood + top-K style plans.
inline void validate_plan(const SparsityPlan& plan) {
  if (plan.kept.size() != plan.blocks) throw ValidationError("plan: wrong number of rows");
  for (std::size_t r = 0; r < plan.blocks; ++r) {
    const auto& ks = plan.kept[r];
    if (!std::is_sorted(ks.begin(), ks.end()) ||
        std::adjacent_find(ks.begin(), ks.end()) != ks.end()) {
      throw ValidationError("plan: kept set not sorted/unique at block " + std::to_string(r));
    }
    if (!ks.empty() && ks.back() >= plan.blocks) {
      throw ValidationError("plan: block id out of range");
    }
    if (!std::binary_search(ks.begin(), ks.end(), r)) {
      throw ValidationError("plan: query block " + std::to_string(r) + " does not keep itself");
    }
    if (plan.provenance == PlanKind::guided || plan.provenance == PlanKind::local ||
        plan.provenance == PlanKind::random) {
      const auto nb = neighborhood(r, plan.radius, plan.blocks);
      for (auto t : nb) {
        if (!std::binary_search(ks.begin(), ks.end(), t)) {
          throw ValidationError("plan: neighbourhood block missing");
        }
      }
      if (ks.size() - nb.size() > plan.k) {
        throw ValidationError("plan: more than K blocks outside the neighbourhood");
      }
    }
  }
}

/// Token-level expansion: entry (r, t) is 0 iff block(t) is kept by block(r).
inline AttentionMask build_sparse_mask(const SparsityPlan& plan, const BlockPartition& query_part,
                                       const BlockPartition& key_part) {
  if (plan.blocks != query_part.blocks() || plan.blocks != key_part.blocks()) {
    throw ShapeError("build_sparse_mask: plan has " + std::to_string(plan.blocks) +
                     " blocks, partitions have " + std::to_string(query_part.blocks()) + "/" +
                     std::to_string(key_part.blocks()));
  }
  AttentionMask m(query_part.length(), key_part.length(), false);
  for (std::size_t r = 0; r < query_part.length(); ++r) {
    const std::size_t br = query_part.block_of(r);
    for (auto bt : plan.kept[br]) {
      for (auto t : key_part.tokens(bt)) m.set(r, t, true);
    }
  }
  return m;
}

struct VariantParams {
  std::size_t blocks = 64;
  std::size_t radius = 1;
  std::size_t k = 3;
  std::size_t window = 3;  // sliding: window width in blocks
};

/// Ablation plans. random: k uniform non-neighbour blocks per query block;
/// local: neighbourhood only; sliding: w blocks centred on the query block,
/// shifted inward at the sequence ends; global: random plus first and last
/// blocks that attend to and are attended by everything.
inline SparsityPlan variant_plan(PlanKind kind, const VariantParams& params, std::uint64_t seed) {
  const std::size_t n = params.blocks;
  if (n == 0) throw ParameterError("variant_plan: N must be positive");
  SparsityPlan plan;
  plan.blocks = n;
  plan.radius = params.radius;
  plan.k = params.k;
  plan.provenance = kind;
  plan.kept.resize(n);
  switch (kind) {
    case PlanKind::full:
      return full_plan(n);
    case PlanKind::local:
      plan.k = 0;
      for (std::size_t r = 0; r < n; ++r) plan.kept[r] = neighborhood(r, params.radius, n);
      return plan;
    case PlanKind::sliding: {
      const std::size_t w = std::clamp<std::size_t>(params.window, 1, n);
      for (std::size_t r = 0; r < n; ++r) {
        std::size_t lo = r >= (w - 1) / 2 ? r - (w - 1) / 2 : 0;
        if (lo + w > n) lo = n - w;
        auto& ks = plan.kept[r];
        for (std::size_t t = lo; t < lo + w; ++t) ks.push_back(t);
      }
      plan.radius = (w - 1) / 2;
      plan.k = 0;
      return plan;
    }
    case PlanKind::random:
    case PlanKind::global: {
      Rng rng(seed);
      for (std::size_t r = 0; r < n; ++r) {
        auto ks = neighborhood(r, params.radius, n);
        std::vector<std::size_t> outside;
        for (std::size_t t = 0; t < n; ++t) {
          if (t + params.radius < r || t > r + params.radius) outside.push_back(t);
        }
        const std::size_t take = std::min(params.k, outside.size());
        for (std::size_t i = 0; i < take; ++i) {  // partial Fisher-Yates
          const std::size_t j = i + static_cast<std::size_t>(rng.below(outside.size() - i));
          std::swap(outside[i], outside[j]);
          ks.push_back(outside[i]);
        }
        std::sort(ks.begin(), ks.end());
        plan.kept[r] = std::move(ks);
      }
      if (kind == PlanKind::global) {
        for (std::size_t r = 0; r < n; ++r) {
          auto& ks = plan.kept[r];
          if (r == 0 || r == n - 1) {
            ks.resize(n);
            std::iota(ks.begin(), ks.end(), std::size_t{0});
            continue;
          }
          ks.push_back(0);
          ks.push_back(n - 1);
          std::sort(ks.begin(), ks.end());
          ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
        }
      }
      return plan;
    }
    case PlanKind::guided:
    case PlanKind::oracle:
      throw ParameterError("variant_plan: " + to_string(kind) +
                           " plans are derived from attention maps, not generated");
  }
  return plan;
}

inline nlohmann::json plan_to_json(const SparsityPlan& plan) {
  return nlohmann::json{{"layer", plan.layer},   {"head", plan.head},
                        {"N", plan.blocks},      {"radius", plan.radius},
                        {"k", plan.k},           {"kept", plan.kept},
                        {"provenance", to_string(plan.provenance)}};
}

inline SparsityPlan plan_from_json(const nlohmann::json& j) {
  SparsityPlan plan;
  plan.layer = j.at("layer").get<std::size_t>();
  plan.head = j.at("head").get<std::size_t>();
  plan.blocks = j.at("N").get<std::size_t>();
  plan.radius = j.at("radius").get<std::size_t>();
  plan.k = j.at("k").get<std::size_t>();
  plan.kept = j.at("kept").get<std::vector<std::vector<std::size_t>>>();
  plan.provenance = plan_kind_from_string(j.at("provenance").get<std::string>());
  if (plan.kept.size() != plan.blocks) throw ValidationError("plan json: kept rows != N");
  return plan;
}

}  // namespace sga
