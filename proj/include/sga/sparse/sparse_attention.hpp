// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sga/attention/dense_attention.hpp"
#include "sga/sparse/plan.hpp"

namespace sga {

/// Masks applied on top of the block plan inside kept blocks.
struct ExtraMask {
  bool causal = false;                  // key token > query token is masked
  const AttentionMask* mask = nullptr;  // optional explicit L_q x L_k mask

  bool kept(std::size_t query, std::size_t key) const {
    if (causal && key > query) return false;
    return mask == nullptr || mask->kept(query, key);
  }
};

/// Attention weights restricted to kept blocks: for every query block, the
/// gathered key tokens and a |queries| x |keys| weight matrix.
template <std::floating_point T>
struct BlockSparseWeights {
  std::size_t query_length = 0;
  std::size_t key_length = 0;
  std::vector<std::vector<std::size_t>> queries;
  std::vector<std::vector<std::size_t>> keys;
  std::vector<Array<T>> weights;

  Array<T> to_dense() const {
    Array<T> out({query_length, key_length});
    for (std::size_t b = 0; b < queries.size(); ++b) {
      for (std::size_t i = 0; i < queries[b].size(); ++i) {
        for (std::size_t j = 0; j < keys[b].size(); ++j) {
          out(queries[b][i], keys[b][j]) = weights[b](i, j);
        }
      }
    }
    return out;
  }

  std::size_t stored_entries() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    return n;
  }
};

template <std::floating_point T>
struct SparseAttentionResult {
  Array<T> output;
  BlockSparseWeights<T> weights;
  std::uint64_t score_flops = 0;
  std::size_t peak_score_entries = 0;  // largest per-block score tile
};

namespace detail {

inline void check_sparse_inputs(const auto& q, const auto& k, const auto& v,
                                const SparsityPlan& plan, const BlockPartition& pq,
                                const BlockPartition& pk) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
      k.rows() != v.rows()) {
    throw ShapeError("sparse_attention: inconsistent q/k/v shapes");
  }
  if (q.rows() != pq.length() || k.rows() != pk.length()) {
    throw ShapeError("sparse_attention: partitions do not match sequence lengths");
  }
  if (plan.blocks != pq.blocks() || plan.blocks != pk.blocks() ||
      plan.kept.size() != plan.blocks) {
    throw ShapeError("sparse_attention: plan block count does not match partitions");
  }
}

}  // namespace detail

/// Block-sparse scaled dot-product attention.
///
/// Scores are computed only for (query block, kept key block) tiles; the full
/// L_q x L_k matrix is never formed. Score FLOPs are
/// 2 * d * sum_r |kept(r)| * |block_q| * |block_k|.
template <std::floating_point T>
SparseAttentionResult<T> sparse_attention(const Array<T>& q, const Array<T>& k,
                                          const Array<T>& v, const SparsityPlan& plan,
                                          const BlockPartition& query_part,
                                          const BlockPartition& key_part,
                                          const ExtraMask& extra = {}) {
  detail::check_sparse_inputs(q, k, v, plan, query_part, key_part);
  if (extra.mask && (extra.mask->rows() != q.rows() || extra.mask->cols() != k.rows())) {
    throw ShapeError("sparse_attention: extra mask shape mismatch");
  }
  const std::size_t d = q.cols();
  const std::size_t dv = v.cols();
  const T scale = T{1} / std::sqrt(static_cast<T>(d));

  SparseAttentionResult<T> res;
  res.output = Array<T>({q.rows(), dv});
  auto& w = res.weights;
  w.query_length = q.rows();
  w.key_length = k.rows();
  w.queries.resize(plan.blocks);
  w.keys.resize(plan.blocks);
  w.weights.resize(plan.blocks);

  std::vector<T> qb, kt, vg, pv;
  for (std::size_t r = 0; r < plan.blocks; ++r) {
    const auto& qtok = query_part.tokens(r);
    std::vector<std::size_t> keys;
    for (auto bt : plan.kept[r]) {
      const auto& kt_tokens = key_part.tokens(bt);
      keys.insert(keys.end(), kt_tokens.begin(), kt_tokens.end());
    }
    const std::size_t nq = qtok.size();
    const std::size_t nk = keys.size();

    qb.assign(nq * d, T{0});
    for (std::size_t i = 0; i < nq; ++i) {
      const T* src = q.data() + qtok[i] * d;
      std::copy(src, src + d, qb.data() + i * d);
    }
    kt.assign(d * nk, T{0});  // keys transposed: d x nk
    vg.assign(nk * dv, T{0});
    for (std::size_t j = 0; j < nk; ++j) {
      const T* ks = k.data() + keys[j] * d;
      for (std::size_t c = 0; c < d; ++c) kt[c * nk + j] = ks[c];
      const T* vs = v.data() + keys[j] * dv;
      std::copy(vs, vs + dv, vg.data() + j * dv);
    }

    Array<T> p({nq, nk});
    detail::gemm_accumulate(qb.data(), kt.data(), p.data(), nq, d, nk);
    res.score_flops += 2ull * d * nq * nk;
    res.peak_score_entries = std::max(res.peak_score_entries, nq * nk);

    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t qi = qtok[i];
      T* row = p.data() + i * nk;
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < nk; ++j) {
        if (extra.kept(qi, keys[j])) {
          row[j] *= scale;
          mx = any ? std::max(mx, row[j]) : row[j];
          any = true;
        }
      }
      if (!any) {
        throw DegenerateRowError("sparse_attention: query " + std::to_string(qi) +
                                     " has no visible key in its kept blocks",
                                 qi);
      }
      T sum{0};
      for (std::size_t j = 0; j < nk; ++j) {
        if (extra.kept(qi, keys[j])) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        } else {
          row[j] = T{0};
        }
      }
      const T inv = T{1} / sum;
      for (std::size_t j = 0; j < nk; ++j) row[j] *= inv;
    }

    pv.assign(nq * dv, T{0});
    detail::gemm_accumulate(p.data(), vg.data(), pv.data(), nq, nk, dv);
    for (std::size_t i = 0; i < nq; ++i) {
      std::copy(pv.data() + i * dv, pv.data() + (i + 1) * dv,
                res.output.data() + qtok[i] * dv);
    }
    w.queries[r] = qtok;
    w.keys[r] = std::move(keys);
    w.weights[r] = std::move(p);
  }
  return res;
}

/// Exact cost model: 2 * d * sum_r |kept(r)| * (L_q / N) * (L_k / N).
inline std::uint64_t sparse_score_flops(const SparsityPlan& plan, std::uint64_t lq,
                                        std::uint64_t lk, std::uint64_t d) {
  return 2ull * d * plan.kept_total() * (lq / plan.blocks) * (lk / plan.blocks);
}

/// Gradients of sparse_attention, computed tile by tile over kept blocks.
template <std::floating_point T>
AttentionGrads<T> sparse_attention_backward(const Array<T>& q, const Array<T>& k,
                                            const Array<T>& v,
                                            const BlockSparseWeights<T>& weights,
                                            const Array<T>& d_out) {
  const std::size_t d = q.cols();
  const std::size_t dv_cols = v.cols();
  const T s = T{1} / std::sqrt(static_cast<T>(d));
  AttentionGrads<T> g{Array<T>(q.shape()), Array<T>(k.shape()), Array<T>(v.shape())};
  for (std::size_t b = 0; b < weights.queries.size(); ++b) {
    const auto& qt = weights.queries[b];
    const auto& kt = weights.keys[b];
    const auto& p = weights.weights[b];
    for (std::size_t i = 0; i < qt.size(); ++i) {
      const T* dout = d_out.data() + qt[i] * dv_cols;
      const T* prow = p.data() + i * kt.size();
      // dP_ij = dO_i . v_j ; dot_i = sum_j dP_ij P_ij
      std::vector<T> dp(kt.size());
      T dot{0};
      for (std::size_t j = 0; j < kt.size(); ++j) {
        if (prow[j] == T{0}) continue;
        const T* vr = v.data() + kt[j] * dv_cols;
        T acc{0};
        for (std::size_t c = 0; c < dv_cols; ++c) acc += dout[c] * vr[c];
        dp[j] = acc;
        dot += acc * prow[j];
      }
      T* dq = g.dq.data() + qt[i] * d;
      const T* qr = q.data() + qt[i] * d;
      for (std::size_t j = 0; j < kt.size(); ++j) {
        if (prow[j] == T{0}) continue;
        T* dvr = g.dv.data() + kt[j] * dv_cols;
        for (std::size_t c = 0; c < dv_cols; ++c) dvr[c] += prow[j] * dout[c];
        const T ds = prow[j] * (dp[j] - dot) * s;
        const T* kr = k.data() + kt[j] * d;
        T* dk = g.dk.data() + kt[j] * d;
        for (std::size_t c = 0; c < d; ++c) {
          dq[c] += ds * kr[c];
          dk[c] += ds * qr[c];
        }
      }
    }
  }
  return g;
}

}  // namespace sga
