// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include "sga/model/weights.hpp"
#include "sga/numerics/grad_tape.hpp"
#include "sga/quantizer/token_grid.hpp"
#include "sga/sparse/plan.hpp"
#include "sga/sparse/sparse_tape.hpp"

namespace sga {

/// Sparsity plans per layer and head for the three attention sites.
struct ModelPlans {
  std::vector<std::vector<SparsityPlan>> enc_self;   // [layer][head]
  std::vector<std::vector<SparsityPlan>> dec_self;   // [layer][head]
  std::vector<std::vector<SparsityPlan>> dec_cross;  // [layer][head]

  /// The same plan at every site, layer and head.
  static ModelPlans uniform(const ModelConfig& cfg, const SparsityPlan& plan) {
    ModelPlans out;
    auto fill = [&](std::vector<std::vector<SparsityPlan>>& site, std::size_t layers) {
      site.assign(layers, std::vector<SparsityPlan>(cfg.heads, plan));
      for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < cfg.heads; ++h) {
          site[l][h].layer = l;
          site[l][h].head = h;
        }
      }
    };
    fill(out.enc_self, cfg.layers_enc);
    fill(out.dec_self, cfg.layers_dec);
    fill(out.dec_cross, cfg.layers_dec);
    return out;
  }

  double mean_sparsity() const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto* site : {&enc_self, &dec_self, &dec_cross}) {
      for (const auto& layer : *site) {
        for (const auto& p : layer) {
          acc += sparsity_ratio(p);
          ++n;
        }
      }
    }
    return n == 0 ? 1.0 : acc / double(n);
  }

  void check(const ModelConfig& cfg) const {
    auto site = [&](const std::vector<std::vector<SparsityPlan>>& s, std::size_t layers,
                    const char* name) {
      if (s.size() != layers) {
        throw ConfigError(std::string("plans: ") + name + " has " + std::to_string(s.size()) +
                          " layers, model has " + std::to_string(layers));
      }
      for (const auto& l : s) {
        if (l.size() != cfg.heads) throw ConfigError(std::string("plans: ") + name + " head count");
        for (const auto& p : l) {
          if (p.blocks != cfg.blocks) throw ConfigError(std::string("plans: ") + name + " block count");
        }
      }
    };
    site(enc_self, cfg.layers_enc, "enc_self");
    site(dec_self, cfg.layers_dec, "dec_self");
    site(dec_cross, cfg.layers_dec, "dec_cross");
  }
};

inline nlohmann::json model_plans_to_json(const ModelPlans& plans) {
  auto site = [](const std::vector<std::vector<SparsityPlan>>& s) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : s) {
      nlohmann::json heads = nlohmann::json::array();
      for (const auto& p : l) heads.push_back(plan_to_json(p));
      layers.push_back(std::move(heads));
    }
    return layers;
  };
  return {{"enc_self", site(plans.enc_self)},
          {"dec_self", site(plans.dec_self)},
          {"dec_cross", site(plans.dec_cross)}};
}

inline ModelPlans model_plans_from_json(const nlohmann::json& j) {
  auto site = [&](const char* name) {
    if (!j.contains(name)) throw ConfigError(std::string("plans: missing ") + name);
    std::vector<std::vector<SparsityPlan>> out;
    for (const auto& l : j.at(name)) {
      out.emplace_back();
      for (const auto& p : l) out.back().push_back(plan_from_json(p));
    }
    return out;
  };
  ModelPlans plans;
  plans.enc_self = site("enc_self");
  plans.dec_self = site("dec_self");
  plans.dec_cross = site("dec_cross");
  return plans;
}

/// Token grid, block partition and positional-conv regions for one length.
struct ModelGeometry {
  GridDims grid;
  std::shared_ptr<const BlockPartition> part;
  std::vector<PegRegion> peg_regions;

  std::size_t length() const { return grid.size(); }
};

inline ModelGeometry make_geometry(const ModelConfig& cfg, GridDims grid) {
  ModelGeometry g;
  g.grid = grid;
  g.part = std::make_shared<const BlockPartition>(
      partition(grid.size(), cfg.blocks, cfg.partition, grid));
  g.peg_regions = g.part->peg_regions();
  return g;
}

/// Per layer, per head attention weight matrices.
template <std::floating_point T>
using LayerMaps = std::vector<std::vector<Array<T>>>;

template <std::floating_point T>
WeightSlots<typename GradTape<T>::Var> bind_weights(GradTape<T>& tape, const ModelWeights<T>& w,
                                                    bool trainable) {
  using Var = typename GradTape<T>::Var;
  auto out = slots_like<Var>(w.p);
  zip_slots(
      [&](const std::string&, const Array<T>& a, Var& v) {
        v = trainable ? tape.parameter(a) : tape.input(a);
      },
      w.p, out);
  return out;
}

/// Decoder input sequence: START followed by the first L-1 target tokens.
inline std::vector<std::size_t> decoder_inputs(const TokenGrid& target, const ModelConfig& cfg) {
  std::vector<std::size_t> prev(target.size());
  if (prev.empty()) return prev;
  prev[0] = cfg.start_token();
  for (std::size_t l = 1; l < prev.size(); ++l) {
    prev[l] = static_cast<std::size_t>(target.tokens[l - 1]);
  }
  return prev;
}

namespace detail {

inline void check_decoder_sequence(const std::vector<std::size_t>& prev, const ModelConfig& cfg,
                                   std::size_t length) {
  if (prev.size() != length) {
    throw ShapeError("decoder: sequence length " + std::to_string(prev.size()) +
                     " != model length " + std::to_string(length));
  }
  if (prev.empty() || prev[0] != cfg.start_token()) {
    throw SequenceError("decoder: sequence must begin with START");
  }
  for (std::size_t l = 1; l < prev.size(); ++l) {
    if (prev[l] == cfg.start_token()) {
      throw SequenceError("decoder: START at position " + std::to_string(l));
    }
  }
}

inline std::vector<std::size_t> token_indices(const TokenGrid& g) {
  std::vector<std::size_t> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.tokens[i] < 0) throw VocabularyError("negative token index");
    out[i] = static_cast<std::size_t>(g.tokens[i]);
  }
  return out;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

}  // namespace detail

/// Builds the transformer graph on a tape. With `plans == nullptr` every
/// attention is dense; otherwise each head uses its block-sparse plan.
template <std::floating_point T>
class TransformerGraph {
 public:
  using Tape = GradTape<T>;
  using Var = typename Tape::Var;

  TransformerGraph(Tape& tape, const WeightSlots<Var>& w, const ModelConfig& cfg,
                   const ModelGeometry& geo, const ModelPlans* plans, bool keep_maps)
      : t_(tape), w_(w), cfg_(cfg), geo_(geo), plans_(plans), keep_maps_(keep_maps) {
    if (plans_) plans_->check(cfg_);
  }

  /// e_l = E_im(x_l) + E_map(p_l) + E_pos(l).
  Var embed(const TokenGrid& x, const TokenGrid& p) {
    if (x.height != p.height || x.width != p.width) {
      throw ShapeError("embed: image and semantic grids differ in shape");
    }
    if (x.size() != geo_.length()) {
      throw ShapeError("embed: grid has " + std::to_string(x.size()) + " tokens, model expects " +
                       std::to_string(geo_.length()));
    }
    Var e = t_.add(t_.gather(w_.e_im, detail::token_indices(x)),
                   t_.gather(w_.e_map, detail::token_indices(p)));
    return t_.add(e, t_.gather(w_.e_pos, detail::iota_indices(x.size())));
  }

  /// PEG -> attention + residual -> LN -> FF + residual -> LN, per layer.
  Var encode(Var x) {
    enc_maps.assign(cfg_.layers_enc, {});
    for (std::size_t i = 0; i < cfg_.layers_enc; ++i) {
      const auto& L = w_.enc[i];
      x = t_.peg(x, L.peg, geo_.peg_regions);
      Var a = attention(L.attn, x, x, plans_ ? &plans_->enc_self[i] : nullptr, false,
                        enc_maps[i]);
      x = t_.layer_norm(t_.add(x, a), L.ln1_g, L.ln1_b);
      x = t_.layer_norm(t_.add(x, feed_forward(x, L.ff_w1, L.ff_b1, L.ff_w2, L.ff_b2)), L.ln2_g,
                        L.ln2_b);
    }
    return x;
  }

  /// Causal decoder over `prev` attending to `memory`; returns L x |Z| logits.
  Var decode(const std::vector<std::size_t>& prev, Var memory) {
    detail::check_decoder_sequence(prev, cfg_, geo_.length());
    dec_self_maps.assign(cfg_.layers_dec, {});
    dec_cross_maps.assign(cfg_.layers_dec, {});
    Var mem = t_.peg(memory, w_.dec_peg, geo_.peg_regions);
    Var y = t_.add(t_.gather(w_.d_im, prev), t_.gather(w_.d_pos, detail::iota_indices(prev.size())));
    for (std::size_t i = 0; i < cfg_.layers_dec; ++i) {
      const auto& L = w_.dec[i];
      Var s = attention(L.self_attn, y, y, plans_ ? &plans_->dec_self[i] : nullptr, true,
                        dec_self_maps[i]);
      y = t_.layer_norm(t_.add(y, s), L.ln1_g, L.ln1_b);
      Var c = attention(L.cross_attn, y, mem, plans_ ? &plans_->dec_cross[i] : nullptr, false,
                        dec_cross_maps[i]);
      y = t_.layer_norm(t_.add(y, c), L.ln2_g, L.ln2_b);
      y = t_.layer_norm(t_.add(y, feed_forward(y, L.ff_w1, L.ff_b1, L.ff_w2, L.ff_b2)), L.ln3_g,
                        L.ln3_b);
    }
    return t_.add_row(t_.matmul(y, w_.w_out), w_.b_out);
  }

  LayerMaps<T> enc_maps, dec_self_maps, dec_cross_maps;

 private:
  Var feed_forward(Var x, Var w1, Var b1, Var w2, Var b2) {
    Var h = t_.gelu(t_.add_row(t_.matmul(x, w1), b1));
    return t_.add_row(t_.matmul(h, w2), b2);
  }

  Var attention(const AttentionSlots<Var>& a, Var xq, Var xkv,
                const std::vector<SparsityPlan>* plans, bool causal,
                std::vector<Array<T>>& maps) {
    const std::size_t heads = cfg_.heads;
    const std::size_t dh = cfg_.head_dim();
    Var q = t_.matmul(xq, a.wq);
    Var k = t_.matmul(xkv, a.wk);
    Var v = t_.matmul(xkv, a.wv);
    const std::size_t lq = t_.value(q).rows();
    const std::size_t lk = t_.value(k).rows();
    std::optional<AttentionMask> mask;
    if (!plans) mask = causal ? causal_mask(lq) : AttentionMask(lq, lk, true);
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = heads == 1 ? q : t_.slice_cols(q, h * dh, dh);
      Var kh = heads == 1 ? k : t_.slice_cols(k, h * dh, dh);
      Var vh = heads == 1 ? v : t_.slice_cols(v, h * dh, dh);
      if (plans) {
        auto store = std::make_shared<BlockSparseWeights<T>>();
        auto plan = std::make_shared<const SparsityPlan>((*plans)[h]);
        outs.push_back(sparse_attention_var(t_, qh, kh, vh, plan, geo_.part, geo_.part, causal,
                                            store));
        if (keep_maps_) maps.push_back(store->to_dense());
      } else {
        Var s = t_.scale(t_.matmul_nt(qh, kh), T{1} / std::sqrt(static_cast<T>(dh)));
        Var p = t_.masked_softmax(s, *mask);
        outs.push_back(t_.matmul(p, vh));
        if (keep_maps_) maps.push_back(t_.value(p));
      }
    }
    Var o = heads == 1 ? outs[0] : t_.concat_cols(outs);
    return t_.add_row(t_.matmul(o, a.wo), a.bo);
  }

  Tape& t_;
  const WeightSlots<Var>& w_;
  const ModelConfig& cfg_;
  const ModelGeometry& geo_;
  const ModelPlans* plans_;
  bool keep_maps_;
};

// ---- value-level entry points (non-recording tape) ----------------------

template <std::floating_point T>
struct EncoderOutput {
  Array<T> features;  // L x d
  LayerMaps<T> maps;  // self-attention, [layer][head]
};

template <std::floating_point T>
struct DecoderOutput {
  Array<T> logits;  // L x |Z|
  LayerMaps<T> self_maps, cross_maps;
};

template <std::floating_point T>
struct ModelOutput {
  Array<T> logits;
  Array<T> memory;
  LayerMaps<T> enc_maps, dec_self_maps, dec_cross_maps;
};

template <std::floating_point T>
Array<T> embed_encoder(const TokenGrid& x, const TokenGrid& p, const ModelWeights<T>& w) {
  GradTape<T> tape(false);
  const auto geo = make_geometry(w.config, w.grid);
  auto vars = bind_weights(tape, w, false);
  TransformerGraph<T> g(tape, vars, w.config, geo, nullptr, false);
  return tape.value(g.embed(x, p));
}

template <std::floating_point T>
EncoderOutput<T> encoder_forward(const TokenGrid& x, const TokenGrid& p, const ModelWeights<T>& w,
                                 const ModelPlans* plans = nullptr, bool keep_maps = true) {
  GradTape<T> tape(false);
  const auto geo = make_geometry(w.config, w.grid);
  auto vars = bind_weights(tape, w, false);
  TransformerGraph<T> g(tape, vars, w.config, geo, plans, keep_maps);
  auto out = g.encode(g.embed(x, p));
  return {tape.value(out), std::move(g.enc_maps)};
}

/// Encoder stack applied to precomputed embeddings (L x d).
template <std::floating_point T>
EncoderOutput<T> encoder_forward(const Array<T>& embeddings, const ModelWeights<T>& w,
                                 const ModelPlans* plans = nullptr, bool keep_maps = true) {
  GradTape<T> tape(false);
  const auto geo = make_geometry(w.config, w.grid);
  auto vars = bind_weights(tape, w, false);
  TransformerGraph<T> g(tape, vars, w.config, geo, plans, keep_maps);
  auto out = g.encode(tape.input(embeddings));
  return {tape.value(out), std::move(g.enc_maps)};
}

template <std::floating_point T>
DecoderOutput<T> decoder_forward(const std::vector<std::size_t>& prev, const Array<T>& memory,
                                 const ModelWeights<T>& w, const ModelPlans* plans = nullptr,
                                 bool keep_maps = false) {
  GradTape<T> tape(false);
  const auto geo = make_geometry(w.config, w.grid);
  auto vars = bind_weights(tape, w, false);
  TransformerGraph<T> g(tape, vars, w.config, geo, plans, keep_maps);
  auto logits = g.decode(prev, tape.input(memory));
  return {tape.value(logits), std::move(g.dec_self_maps), std::move(g.dec_cross_maps)};
}

template <std::floating_point T>
ModelOutput<T> model_forward(const TokenGrid& x, const TokenGrid& p,
                             const std::vector<std::size_t>& prev, const ModelWeights<T>& w,
                             const ModelPlans* plans = nullptr, bool keep_maps = false) {
  GradTape<T> tape(false);
  const auto geo = make_geometry(w.config, w.grid);
  auto vars = bind_weights(tape, w, false);
  TransformerGraph<T> g(tape, vars, w.config, geo, plans, keep_maps);
  auto memory = g.encode(g.embed(x, p));
  auto logits = g.decode(prev, memory);
  return {tape.value(logits), tape.value(memory), std::move(g.enc_maps),
          std::move(g.dec_self_maps), std::move(g.dec_cross_maps)};
}

/// Dense forward of the (low-resolution) guiding model with every
/// attention map exposed.
template <std::floating_point T>
ModelOutput<T> guiding_forward(const TokenGrid& x_low, const TokenGrid& p_low,
                               const std::vector<std::size_t>& prev, const ModelWeights<T>& w) {
  return model_forward(x_low, p_low, prev, w, nullptr, true);
}

}  // namespace sga
