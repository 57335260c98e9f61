// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

#include "sga/attention/mask.hpp"
#include "sga/numerics/ops.hpp"

namespace sga {

template <std::floating_point T>
struct AttentionResult {
  Array<T> output;   // L_q x d
  Array<T> weights;  // L_q x L_k, row-stochastic
};

/// Score FLOPs of the full L_q x L_k product, 2 * L_q * L_k * d.
constexpr std::uint64_t dense_score_flops(std::uint64_t lq, std::uint64_t lk,
                                          std::uint64_t d) {
  return 2 * lq * lk * d;
}

/// softmax(q k^T / sqrt(d) + mask) v, materializing the full weight matrix.
template <std::floating_point T>
AttentionResult<T> dense_attention(const Array<T>& q, const Array<T>& k, const Array<T>& v,
                                   const AttentionMask& mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
      k.rows() != v.rows()) {
    throw ShapeError("dense_attention: inconsistent q/k/v shapes " + shape_string(q.shape()) +
                     " " + shape_string(k.shape()) + " " + shape_string(v.shape()));
  }
  if (mask.rows() != q.rows() || mask.cols() != k.rows()) {
    throw ShapeError("dense_attention: mask shape mismatch");
  }
  const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(q.cols()));
  Array<T> scores = matmul_nt(q, k);
  for (auto& s : scores.values()) s *= inv_sqrt_d;
  Array<T> weights = masked_softmax(scores, mask);
  Array<T> output = matmul(weights, v);
  return {std::move(output), std::move(weights)};
}

template <std::floating_point T>
AttentionResult<T> dense_attention(const Array<T>& q, const Array<T>& k, const Array<T>& v) {
  return dense_attention(q, k, v, AttentionMask(q.rows(), k.rows(), true));
}

template <std::floating_point T>
struct AttentionGrads {
  Array<T> dq, dk, dv;
};

/// Gradients of dense_attention given the forward weights and d(output).
template <std::floating_point T>
AttentionGrads<T> dense_attention_backward(const Array<T>& q, const Array<T>& k,
                                           const Array<T>& v, const Array<T>& weights,
                                           const Array<T>& d_out) {
  const T s = T{1} / std::sqrt(static_cast<T>(q.cols()));
  Array<T> dv = matmul_tn(weights, d_out);
  Array<T> dp = matmul_nt(d_out, v);
  Array<T> ds({weights.rows(), weights.cols()});
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    T dot{0};
    for (std::size_t c = 0; c < weights.cols(); ++c) dot += dp(r, c) * weights(r, c);
    for (std::size_t c = 0; c < weights.cols(); ++c) {
      ds(r, c) = weights(r, c) * (dp(r, c) - dot) * s;
    }
  }
  return {matmul(ds, k), matmul_tn(ds, q), std::move(dv)};
}

}  // namespace sga
