// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "sga/core/rng.hpp"
#include "sga/model/config.hpp"
#include "sga/numerics/dense_array.hpp"

namespace sga {

template <class S>
struct AttentionSlots {
  S wq, wk, wv, wo, bo;
};

template <class S>
struct EncoderLayerSlots {
  S peg;
  AttentionSlots<S> attn;
  S ln1_g, ln1_b;
  S ff_w1, ff_b1, ff_w2, ff_b2;
  S ln2_g, ln2_b;
};

template <class S>
struct DecoderLayerSlots {
  AttentionSlots<S> self_attn, cross_attn;
  S ln1_g, ln1_b, ln2_g, ln2_b;
  S ff_w1, ff_b1, ff_w2, ff_b2;
  S ln3_g, ln3_b;
};

/// Every parameter of one encoder-decoder transformer, generic over the slot
/// type (arrays for storage, tape variables during a forward pass).
template <class S>
struct WeightSlots {
  S e_im, e_map, e_pos;
  S d_im, d_pos;
  S dec_peg;
  std::vector<EncoderLayerSlots<S>> enc;
  std::vector<DecoderLayerSlots<S>> dec;
  S w_out, b_out;
};

namespace detail {

template <class F, class... A>
void zip_attention(F& f, const std::string& p, A&... a) {
  f(p + "wq", a.wq...);
  f(p + "wk", a.wk...);
  f(p + "wv", a.wv...);
  f(p + "wo", a.wo...);
  f(p + "bo", a.bo...);
}

template <class First, class... Rest>
const First& first_of(const First& f, const Rest&...) {
  return f;
}

}  // namespace detail

/// Calls f(name, slot_1, ..., slot_n) for every parameter, in a fixed order,
/// walking several WeightSlots in lockstep. Layer vectors must already match.
template <class F, class... W>
void zip_slots(F&& f, W&... ws) {
  const auto& first = detail::first_of(ws...);
  f("e_im", ws.e_im...);
  f("e_map", ws.e_map...);
  f("e_pos", ws.e_pos...);
  f("d_im", ws.d_im...);
  f("d_pos", ws.d_pos...);
  f("dec_peg", ws.dec_peg...);
  for (std::size_t i = 0; i < first.enc.size(); ++i) {
    const std::string p = "enc" + std::to_string(i) + ".";
    f(p + "peg", ws.enc[i].peg...);
    detail::zip_attention(f, p + "attn.", ws.enc[i].attn...);
    f(p + "ln1_g", ws.enc[i].ln1_g...);
    f(p + "ln1_b", ws.enc[i].ln1_b...);
    f(p + "ff_w1", ws.enc[i].ff_w1...);
    f(p + "ff_b1", ws.enc[i].ff_b1...);
    f(p + "ff_w2", ws.enc[i].ff_w2...);
    f(p + "ff_b2", ws.enc[i].ff_b2...);
    f(p + "ln2_g", ws.enc[i].ln2_g...);
    f(p + "ln2_b", ws.enc[i].ln2_b...);
  }
  for (std::size_t i = 0; i < first.dec.size(); ++i) {
    const std::string p = "dec" + std::to_string(i) + ".";
    detail::zip_attention(f, p + "self.", ws.dec[i].self_attn...);
    detail::zip_attention(f, p + "cross.", ws.dec[i].cross_attn...);
    f(p + "ln1_g", ws.dec[i].ln1_g...);
    f(p + "ln1_b", ws.dec[i].ln1_b...);
    f(p + "ln2_g", ws.dec[i].ln2_g...);
    f(p + "ln2_b", ws.dec[i].ln2_b...);
    f(p + "ff_w1", ws.dec[i].ff_w1...);
    f(p + "ff_b1", ws.dec[i].ff_b1...);
    f(p + "ff_w2", ws.dec[i].ff_w2...);
    f(p + "ff_b2", ws.dec[i].ff_b2...);
    f(p + "ln3_g", ws.dec[i].ln3_g...);
    f(p + "ln3_b", ws.dec[i].ln3_b...);
  }
  f("w_out", ws.w_out...);
  f("b_out", ws.b_out...);
}

template <class S, class U>
WeightSlots<S> slots_like(const WeightSlots<U>& other) {
  WeightSlots<S> out;
  out.enc.resize(other.enc.size());
  out.dec.resize(other.dec.size());
  return out;
}

/// Parameters plus the configuration and token grid they were built for
/// (the grid sets the positional table length).
template <std::floating_point T>
struct ModelWeights {
  ModelConfig config;
  GridDims grid;
  WeightSlots<Array<T>> p;

  std::size_t length() const { return grid.size(); }

  template <class F>
  void for_each(F&& f) {
    zip_slots(std::forward<F>(f), p);
  }
  template <class F>
  void for_each(F&& f) const {
    zip_slots(std::forward<F>(f), p);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Array<T>& a) { n += a.size(); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Array<T>& a) { ok = ok && a.all_finite(); });
    return ok;
  }

  template <std::floating_point U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out{config, grid, slots_like<Array<U>>(p)};
    zip_slots([](const std::string&, const Array<T>& src, Array<U>& dst) { dst = src.template cast<U>(); },
              p, out.p);
    return out;
  }
};

namespace detail {

template <std::floating_point T>
Array<T> normal_array(Shape shape, double stddev, Rng& rng) {
  Array<T> a(std::move(shape));
  for (auto& v : a.values()) v = static_cast<T>(rng.normal() * stddev);
  return a;
}

template <std::floating_point T>
AttentionSlots<Array<T>> init_attention(std::size_t d, Rng& rng) {
  const double s = 1.0 / std::sqrt(double(d));
  return {normal_array<T>({d, d}, s, rng), normal_array<T>({d, d}, s, rng),
          normal_array<T>({d, d}, s, rng), normal_array<T>({d, d}, s, rng), Array<T>({d})};
}

}  // namespace detail

/// Random initialisation. Embeddings and the output head start small so the
/// initial predictive distribution is close to uniform.
template <std::floating_point T = float>
ModelWeights<T> init_weights(const ModelConfig& cfg, GridDims grid, std::uint64_t seed) {
  cfg.validate();
  if (grid.size() % cfg.blocks != 0) {
    throw ConfigError("init_weights: N does not divide L for grid " +
                      std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  Rng rng(derive_seed(seed, "init"));
  const std::size_t d = cfg.d, f = cfg.ff(), L = grid.size();
  ModelWeights<T> w;
  w.config = cfg;
  w.grid = grid;
  auto& p = w.p;
  p.e_im = detail::normal_array<T>({cfg.vocab + 1, d}, 0.5, rng);
  p.e_map = detail::normal_array<T>({cfg.map_vocab, d}, 0.5, rng);
  p.e_pos = detail::normal_array<T>({L, d}, 0.5, rng);
  p.d_im = detail::normal_array<T>({cfg.vocab + 2, d}, 0.5, rng);
  p.d_pos = detail::normal_array<T>({L, d}, 0.5, rng);
  p.dec_peg = detail::normal_array<T>({5, 5, d}, 0.02, rng);
  const Array<T> ones({d}, T{1});
  for (std::size_t i = 0; i < cfg.layers_enc; ++i) {
    EncoderLayerSlots<Array<T>> l;
    l.peg = detail::normal_array<T>({5, 5, d}, 0.02, rng);
    l.attn = detail::init_attention<T>(d, rng);
    l.ln1_g = ones;
    l.ln1_b = Array<T>({d});
    l.ff_w1 = detail::normal_array<T>({d, f}, 1.0 / std::sqrt(double(d)), rng);
    l.ff_b1 = Array<T>({f});
    l.ff_w2 = detail::normal_array<T>({f, d}, 1.0 / std::sqrt(double(f)), rng);
    l.ff_b2 = Array<T>({d});
    l.ln2_g = ones;
    l.ln2_b = Array<T>({d});
    p.enc.push_back(std::move(l));
  }
  for (std::size_t i = 0; i < cfg.layers_dec; ++i) {
    DecoderLayerSlots<Array<T>> l;
    l.self_attn = detail::init_attention<T>(d, rng);
    l.cross_attn = detail::init_attention<T>(d, rng);
    l.ln1_g = ones;
    l.ln1_b = Array<T>({d});
    l.ln2_g = ones;
    l.ln2_b = Array<T>({d});
    l.ff_w1 = detail::normal_array<T>({d, f}, 1.0 / std::sqrt(double(d)), rng);
    l.ff_b1 = Array<T>({f});
    l.ff_w2 = detail::normal_array<T>({f, d}, 1.0 / std::sqrt(double(f)), rng);
    l.ff_b2 = Array<T>({d});
    l.ln3_g = ones;
    l.ln3_b = Array<T>({d});
    p.dec.push_back(std::move(l));
  }
  p.w_out = detail::normal_array<T>({d, cfg.vocab}, 0.01, rng);
  p.b_out = Array<T>({cfg.vocab});
  return w;
}

/// Bilinear (align-corners) resampling of a positional table laid out on
/// `from` to the grid `to`. Corner rows are copied exactly.
template <std::floating_point T>
Array<T> interpolate_positions(const Array<T>& table, GridDims from, GridDims to) {
  if (table.rank() != 2 || table.rows() != from.size()) {
    throw ShapeError("interpolate_positions: table does not match source grid");
  }
  const std::size_t d = table.cols();
  Array<T> out({to.size(), d});
  auto coord = [](std::size_t i, std::size_t n_to, std::size_t n_from) {
    if (n_to <= 1 || n_from <= 1) return 0.0;
    return double(i) * double(n_from - 1) / double(n_to - 1);
  };
  for (std::size_t y = 0; y < to.height; ++y) {
    const double sy = coord(y, to.height, from.height);
    const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, from.height - 1);
    const double fy = sy - double(y0);
    for (std::size_t x = 0; x < to.width; ++x) {
      const double sx = coord(x, to.width, from.width);
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, from.width - 1);
      const double fx = sx - double(x0);
      const T* a = table.data() + (y0 * from.width + x0) * d;
      const T* b = table.data() + (y0 * from.width + x1) * d;
      const T* c = table.data() + (y1 * from.width + x0) * d;
      const T* e = table.data() + (y1 * from.width + x1) * d;
      T* dst = out.data() + (y * to.width + x) * d;
      for (std::size_t k = 0; k < d; ++k) {
        const double top = (1 - fx) * a[k] + fx * b[k];
        const double bot = (1 - fx) * c[k] + fx * e[k];
        dst[k] = static_cast<T>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

/// Copies a trained low-resolution model into a model for `grid`; only the
/// positional tables change (bilinear interpolation over the token grid).
template <std::floating_point T>
ModelWeights<T> init_from_guiding(const ModelWeights<T>& low, GridDims grid,
                                  const ModelConfig* target = nullptr) {
  if (target) {
    const auto& a = low.config;
    const auto& b = *target;
    if (a.d != b.d || a.heads != b.heads || a.layers_enc != b.layers_enc ||
        a.layers_dec != b.layers_dec || a.vocab != b.vocab || a.map_vocab != b.map_vocab ||
        a.ff() != b.ff()) {
      throw ConfigError("init_from_guiding: guide and target configs differ beyond resolution");
    }
  }
  if (grid.size() % low.config.blocks != 0) {
    throw ConfigError("init_from_guiding: N does not divide the target length");
  }
  ModelWeights<T> out = low;
  if (target) out.config = *target;
  out.grid = grid;
  if (grid != low.grid) {
    out.p.e_pos = interpolate_positions(low.p.e_pos, low.grid, grid);
    out.p.d_pos = interpolate_positions(low.p.d_pos, low.grid, grid);
  }
  return out;
}

}  // namespace sga
