// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "sga/core/error.hpp"
#include "sga/core/rng.hpp"

namespace sga {

/// Indices of the k largest logits, largest first; ties go to the lower index.
template <class Logits>
std::vector<std::size_t> topk_indices(const Logits& logits, std::size_t k) {
  if (k == 0 || k > logits.size()) {
    throw ParameterError("top-k: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(logits.size()) + "]");
  }
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](std::size_t a, std::size_t b) {
    return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
  });
  idx.resize(k);
  return idx;
}

/// The renormalised top-k distribution: (index, probability) pairs in
/// top-k order, computed in double precision.
template <class Logits>
std::vector<std::pair<std::size_t, double>> topk_distribution(const Logits& logits,
                                                              std::size_t k,
                                                              double temperature = 1.0) {
  if (!(temperature > 0.0)) throw ParameterError("top-k: temperature must be positive");
  const auto idx = topk_indices(logits, k);
  std::vector<std::pair<std::size_t, double>> out(k);
  const double mx = double(logits[idx[0]]) / temperature;
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double e = std::exp(double(logits[idx[i]]) / temperature - mx);
    out[i] = {idx[i], e};
    z += e;
  }
  for (auto& p : out) p.second /= z;
  return out;
}

struct TopkDraw {
  std::size_t index = 0;
  double logprob = 0.0;  // log of the renormalised top-k probability
};

/// Samples from softmax restricted to the k highest logits.
template <class Logits>
TopkDraw topk_sample(const Logits& logits, std::size_t k, Rng& rng,
                     double temperature = 1.0) {
  const auto dist = topk_distribution(logits, k, temperature);
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t pick = dist.size() - 1;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    cum += dist[i].second;
    if (u < cum) {
      pick = i;
      break;
    }
  }
  return {dist[pick].first, std::log(dist[pick].second)};
}

/// log p(index) under the top-k distribution; -inf outside the top k.
template <class Logits>
double topk_logprob(const Logits& logits, std::size_t k, std::size_t index,
                    double temperature = 1.0) {
  for (const auto& [i, p] : topk_distribution(logits, k, temperature)) {
    if (i == index) return std::log(p);
  }
  return -std::numeric_limits<double>::infinity();
}

}  // namespace sga
