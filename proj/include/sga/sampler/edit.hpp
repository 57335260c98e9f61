// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "sga/model/transformer.hpp"
#include "sga/sampler/topk.hpp"

namespace sga {

struct Candidate {
  TokenGrid tokens;
  double logprob = 0.0;  // sum over masked positions
};

/// Candidates sorted by joint log-probability, best first.
struct CandidateSet {
  std::vector<Candidate> items;

  std::size_t size() const { return items.size(); }
  const Candidate& operator[](std::size_t i) const { return items[i]; }
};

struct SamplingOptions {
  std::size_t k = 100;
  std::size_t n_samples = 50;
  std::size_t n_keep = 10;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// Worker count after the SGA_DETERMINISTIC override.
inline std::size_t effective_workers(std::size_t requested) {
  const char* env = std::getenv("SGA_DETERMINISTIC");
  if (env != nullptr && std::string(env) == "1") return 1;
  return std::max<std::size_t>(1, requested);
}

/// Stable descending sort by log-probability; ties keep generation order.
inline CandidateSet rank_candidates(CandidateSet set) {
  for (const auto& c : set.items) {
    if (!std::isfinite(c.logprob)) throw NumericalError("rank_candidates: non-finite log-prob");
  }
  std::stable_sort(set.items.begin(), set.items.end(),
                   [](const Candidate& a, const Candidate& b) { return a.logprob > b.logprob; });
  return set;
}

namespace detail {

inline std::string describe_plans(const ModelPlans* plans) {
  if (!plans) return "dense";
  std::string out = "sparse, mean kept fraction " + std::to_string(plans->mean_sparsity());
  if (!plans->dec_self.empty() && !plans->dec_self[0].empty()) {
    out += ", decoder self plan " + to_string(plans->dec_self[0][0].provenance);
  }
  return out;
}

}  // namespace detail

/// Decodes one candidate in row-major order: unmasked positions are forced
/// to their original token, masked positions are drawn by top-k sampling.
template <std::floating_point T>
Candidate sample_candidate(const TokenGrid& image, const MaskMap& mask, const Array<T>& memory,
                           const ModelWeights<T>& w, const ModelPlans* plans, std::size_t k,
                           double temperature, Rng& rng) {
  const auto& cfg = w.config;
  Candidate c{apply_mask(image, mask), 0.0};
  for (std::size_t l = 0; l < c.tokens.size(); ++l) {
    if (!mask[l]) {
      c.tokens.tokens[l] = image.tokens[l];
      continue;
    }
    DecoderOutput<T> dec;
    try {
      dec = decoder_forward(decoder_inputs(c.tokens, cfg), memory, w, plans, false);
    } catch (const DegenerateRowError& e) {
      throw DecodingError("decoding position " + std::to_string(l) + " under " +
                          detail::describe_plans(plans) + ": " + e.what());
    }
    const auto draw = topk_sample(dec.logits.row(l), k, rng, temperature);
    c.tokens.tokens[l] = static_cast<Token>(draw.index);
    c.logprob += draw.logprob;
  }
  return c;
}

/// Samples n_samples completions (independent RNG stream per candidate),
/// ranks them by joint log-probability and keeps the best n_keep. An empty
/// mask yields the input itself as the only candidate.
template <std::floating_point T>
CandidateSet autoregressive_edit(const TokenGrid& image, const TokenGrid& semantic,
                                 const MaskMap& mask, const ModelWeights<T>& w,
                                 const ModelPlans* plans, const SamplingOptions& opts) {
  image.validate();
  if (image.has_mask()) throw ValidationError("edit: image tokens must not contain MASK");
  if (mask.height != image.height || mask.width != image.width) {
    throw ShapeError("edit: mask and image grids differ in shape");
  }
  if (opts.n_samples == 0 || opts.n_keep == 0) {
    throw ParameterError("edit: n_samples and n_keep must be >= 1");
  }
  if (opts.k == 0 || opts.k > w.config.vocab) {
    throw ParameterError("edit: k=" + std::to_string(opts.k) + " outside [1, |Z|]");
  }
  if (!mask.any()) return CandidateSet{{Candidate{image, 0.0}}};

  EncoderOutput<T> enc;
  try {
    enc = encoder_forward(apply_mask(image, mask), semantic, w, plans, false);
  } catch (const DegenerateRowError& e) {
    throw DecodingError(std::string("encoder: ") + e.what());
  }

  std::vector<Candidate> out(opts.n_samples);
  std::vector<std::exception_ptr> errors(opts.n_samples);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < opts.n_samples; i = next++) {
      try {
        Rng rng(derive_seed(opts.seed, "candidate", i));
        out[i] = sample_candidate(image, mask, enc.features, w, plans, opts.k, opts.temperature,
                                  rng);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(effective_workers(opts.workers), opts.n_samples);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  CandidateSet ranked = rank_candidates(CandidateSet{std::move(out)});
  if (ranked.items.size() > opts.n_keep) ranked.items.resize(opts.n_keep);
  return ranked;
}

/// Recomputes a candidate's joint log-probability with one forced pass.
template <std::floating_point T>
double rescore_candidate(const TokenGrid& image, const TokenGrid& semantic, const MaskMap& mask,
                         const TokenGrid& completed, const ModelWeights<T>& w,
                         const ModelPlans* plans, std::size_t k, double temperature = 1.0) {
  const auto out = model_forward(apply_mask(image, mask), semantic,
                                 decoder_inputs(completed, w.config), w, plans, false);
  double lp = 0.0;
  for (std::size_t l = 0; l < completed.size(); ++l) {
    if (!mask[l]) continue;
    lp += topk_logprob(out.logits.row(l), k, static_cast<std::size_t>(completed.tokens[l]),
                       temperature);
  }
  return lp;
}

inline nlohmann::json candidates_to_json(const CandidateSet& set) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    arr.push_back({{"tokens", token_grid_to_json(set.items[i].tokens)},
                   {"logprob", set.items[i].logprob},
                   {"rank", i}});
  }
  return arr;
}

}  // namespace sga
