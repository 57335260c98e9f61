// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "sga/evalbench/train.hpp"
#include "sga/sampler/guide.hpp"

namespace sga {

/// For every token, the token whose value determines it (if any).
inline std::vector<std::optional<std::size_t>> task_dependencies(const SyntheticTask& task) {
  const std::size_t H = task.grid.height, W = task.grid.width;
  std::vector<std::optional<std::size_t>> dep(H * W);
  switch (task.kind) {
    case TaskKind::mirror:
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) dep[i * W + j] = (H - 1 - i) * W + j;
      }
      break;
    case TaskKind::copy_corner: {
      const std::size_t q = task.corner();
      for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
          const std::size_t a = i * W + j, b = (H - q + i) * W + (W - q + j);
          dep[a] = b;
          dep[b] = a;
        }
      }
      break;
    }
    case TaskKind::constant_region:
      throw ParameterError("oracle plans: constant-region has no fixed dependency structure");
  }
  return dep;
}

/// Plans that keep the neighbourhood plus exactly the blocks holding each
/// query's known dependency. The decoder reads token t at input position
/// t + 1, so its self-attention plan also keeps that shifted block.
inline ModelPlans oracle_plans(const SyntheticTask& task, const ModelConfig& cfg) {
  const auto geo = make_geometry(cfg, task.grid);
  const auto& part = *geo.part;
  const auto dep = task_dependencies(task);
  const std::size_t n = cfg.blocks, L = task.grid.size();
  auto build = [&](bool shifted) {
    SparsityPlan p;
    p.blocks = n;
    p.radius = cfg.radius;
    p.provenance = PlanKind::oracle;
    p.kept.resize(n);
    std::size_t extra = 0;
    for (std::size_t r = 0; r < n; ++r) {
      std::set<std::size_t> ks;
      for (auto t : neighborhood(r, cfg.radius, n)) ks.insert(t);
      const std::size_t base = ks.size();
      for (auto l : part.tokens(r)) {
        if (!dep[l]) continue;
        ks.insert(part.block_of(*dep[l]));
        if (shifted && *dep[l] + 1 < L) ks.insert(part.block_of(*dep[l] + 1));
      }
      extra = std::max(extra, ks.size() - base);
      p.kept[r].assign(ks.begin(), ks.end());
    }
    p.k = extra;
    return p;
  };
  ModelPlans plans = ModelPlans::uniform(cfg, build(false));
  const ModelPlans dec = ModelPlans::uniform(cfg, build(true));
  plans.dec_self = dec.dec_self;
  return plans;
}

/// One plan kind at every site; random-style kinds draw a fresh plan per
/// (site, layer, head) from named sub-seeds.
inline ModelPlans variant_model_plans(PlanKind kind, const ModelConfig& cfg, std::size_t window,
                                      std::uint64_t seed) {
  VariantParams vp{cfg.blocks, cfg.radius, cfg.k, window};
  ModelPlans plans = ModelPlans::uniform(cfg, full_plan(cfg.blocks));
  auto fill = [&](std::vector<std::vector<SparsityPlan>>& site, const char* name) {
    for (std::size_t l = 0; l < site.size(); ++l) {
      for (std::size_t h = 0; h < site[l].size(); ++h) {
        SparsityPlan p = kind == PlanKind::full
                             ? full_plan(cfg.blocks)
                             : variant_plan(kind, vp, derive_seed(seed, name, l * cfg.heads + h));
        p.layer = l;
        p.head = h;
        site[l][h] = std::move(p);
      }
    }
  };
  fill(plans.enc_self, "plan-enc");
  fill(plans.dec_self, "plan-dec-self");
  fill(plans.dec_cross, "plan-dec-cross");
  return plans;
}

/// Guided plans from a trained dense model: head maps averaged over
/// `instances` task samples, then pooled and selected per (layer, head).
inline ModelPlans guided_plans_from_model(const ModelWeights<float>& dense,
                                          const SyntheticTask& task, std::size_t instances,
                                          std::uint64_t seed) {
  Rng rng(derive_seed(seed, "guide-maps"));
  LayerMaps<float> enc, dec_self, cross;
  auto accumulate = [](LayerMaps<float>& acc, const LayerMaps<float>& m) {
    if (acc.empty()) {
      acc = m;
      return;
    }
    for (std::size_t l = 0; l < m.size(); ++l) {
      for (std::size_t h = 0; h < m[l].size(); ++h) acc[l][h] = add(acc[l][h], m[l][h]);
    }
  };
  for (std::size_t i = 0; i < instances; ++i) {
    const TrainExample ex = sample_example(task, rng);
    const auto out = guiding_forward(apply_mask(ex.target, ex.mask), ex.semantic,
                                     decoder_inputs(ex.target, dense.config), dense);
    accumulate(enc, out.enc_maps);
    accumulate(dec_self, out.dec_self_maps);
    accumulate(cross, out.dec_cross_maps);
  }
  const auto geo = make_geometry(dense.config, dense.grid);
  return plans_from_maps(enc, dec_self, cross, *geo.part, *geo.part, dense.config.k,
                         dense.config.radius);
}

/// Fraction of masked tokens recovered by greedy (k = 1) forced decoding.
inline double masked_accuracy(const ModelWeights<float>& w, const std::vector<TrainExample>& set,
                              const ModelPlans* plans) {
  std::size_t correct = 0, total = 0;
  Rng unused(0);
  for (const auto& ex : set) {
    const auto enc = encoder_forward(apply_mask(ex.target, ex.mask), ex.semantic, w, plans, false);
    const Candidate c = sample_candidate(ex.target, ex.mask, enc.features, w, plans, 1, 1.0, unused);
    for (std::size_t i = 0; i < ex.mask.bits.size(); ++i) {
      if (!ex.mask[i]) continue;
      ++total;
      correct += c.tokens.tokens[i] == ex.target.tokens[i];
    }
  }
  return total == 0 ? 0.0 : double(correct) / double(total);
}

inline std::vector<TrainExample> held_out_examples(const SyntheticTask& task, std::size_t n,
                                                   std::uint64_t seed) {
  Rng rng(derive_seed(seed, "held-out"));
  std::vector<TrainExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_example(task, rng));
  return out;
}

/// Score FLOPs of one full forward pass (all attention sites and heads).
inline std::uint64_t model_score_flops(const ModelConfig& cfg, GridDims grid,
                                       const ModelPlans* plans) {
  const std::uint64_t L = grid.size(), dh = cfg.head_dim();
  if (!plans) {
    return dense_score_flops(L, L, dh) * cfg.heads * (cfg.layers_enc + 2 * cfg.layers_dec);
  }
  std::uint64_t total = 0;
  for (const auto* site : {&plans->enc_self, &plans->dec_self, &plans->dec_cross}) {
    for (const auto& layer : *site) {
      for (const auto& p : layer) total += sparse_score_flops(p, L, L, dh);
    }
  }
  return total;
}

struct AblationBudget {
  TrainOptions train;                       // steps, lr, batch, optimiser
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t eval_instances = 200;
  std::size_t window = 3;                   // sliding-window width in blocks
  std::size_t guide_instances = 32;
};

struct AblationRow {
  std::string variant;
  std::vector<double> accuracy;  // per seed
  std::vector<double> final_loss;
  double mean_accuracy = 0.0;
  double sparsity = 1.0;
  std::uint64_t score_flops = 0;
  std::size_t steps = 0;
  std::size_t batch = 0;
  double seconds = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;

  const AblationRow* find(const std::string& name) const {
    for (const auto& r : rows) {
      if (r.variant == name) return &r;
    }
    return nullptr;
  }
};

using AblationProgress = std::function<void(const std::string& variant, std::uint64_t seed,
                                            std::size_t step, double loss)>;

/// Trains every variant with the same budget and seeds and measures masked
/// accuracy on the same held-out set. Variant names: dense, full, local,
/// sliding, random, global, oracle, guided (guided derives its plans from
/// the dense model of the same seed, so dense is trained first).
inline AblationReport run_ablation(const std::vector<std::string>& variants,
                                   const SyntheticTask& task, const ModelConfig& cfg,
                                   const AblationBudget& budget,
                                   const AblationProgress& progress = {}) {
  cfg.validate();
  if (budget.seeds.empty()) throw ConfigError("ablation: at least one seed required");
  AblationReport report;
  std::vector<std::optional<ModelWeights<float>>> dense_models(budget.seeds.size());
  const bool want_guided =
      std::find(variants.begin(), variants.end(), "guided") != variants.end();
  std::vector<std::string> order = variants;
  if (want_guided && std::find(order.begin(), order.end(), "dense") == order.end()) {
    order.insert(order.begin(), "dense");
  }
  std::stable_partition(order.begin(), order.end(), [](const std::string& v) { return v == "dense"; });

  for (const auto& name : order) {
    AblationRow row;
    row.variant = name;
    row.steps = budget.train.steps;
    row.batch = budget.train.batch;
    const auto t0 = std::chrono::steady_clock::now();
    double sparsity_acc = 0.0;
    for (std::size_t si = 0; si < budget.seeds.size(); ++si) {
      const std::uint64_t seed = budget.seeds[si];
      std::optional<ModelPlans> plans;
      if (name == "oracle") {
        plans = oracle_plans(task, cfg);
      } else if (name == "guided") {
        plans = guided_plans_from_model(*dense_models[si], task, budget.guide_instances, seed);
      } else if (name != "dense") {
        plans = variant_model_plans(plan_kind_from_string(name), cfg, budget.window, seed);
      }
      TrainOptions opts = budget.train;
      opts.seed = seed;
      auto init = init_weights<float>(cfg, task.grid, seed);
      std::function<void(std::size_t, double)> cb;
      if (progress) cb = [&](std::size_t s, double l) { progress(name, seed, s, l); };
      TrainResult tr = train(std::move(init), task_source(task), opts, fixed_plans(plans), cb);
      const auto held = held_out_examples(task, budget.eval_instances, seed);
      row.accuracy.push_back(masked_accuracy(tr.weights, held, plans ? &*plans : nullptr));
      row.final_loss.push_back(tr.losses.back());
      sparsity_acc += plans ? plans->mean_sparsity() : 1.0;
      row.score_flops = model_score_flops(cfg, task.grid, plans ? &*plans : nullptr);
      if (name == "dense") dense_models[si] = std::move(tr.weights);
    }
    row.sparsity = sparsity_acc / double(budget.seeds.size());
    double acc = 0.0;
    for (double a : row.accuracy) acc += a;
    row.mean_accuracy = acc / double(row.accuracy.size());
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (std::find(variants.begin(), variants.end(), name) != variants.end()) {
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

inline nlohmann::json ablation_to_json(const AblationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"variant", row.variant},
                    {"accuracy", row.accuracy},
                    {"mean_accuracy", row.mean_accuracy},
                    {"final_loss", row.final_loss},
                    {"sparsity", row.sparsity},
                    {"score_flops", row.score_flops},
                    {"steps", row.steps},
                    {"batch", row.batch},
                    {"seeds", row.accuracy.size()}});
  }
  return {{"rows", rows}};
}

inline std::string ablation_to_text(const AblationReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %10s %10s %14s %8s %6s\n", "variant", "accuracy",
                "sparsity", "score_flops", "steps", "seeds");
  out += buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-10s %10.4f %10.4f %14llu %8zu %6zu\n", row.variant.c_str(),
                  row.mean_accuracy, row.sparsity,
                  static_cast<unsigned long long>(row.score_flops), row.steps,
                  row.accuracy.size());
    out += buf;
  }
  return out;
}

}  // namespace sga
