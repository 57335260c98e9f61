// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>

#include "sga/numerics/grad_tape.hpp"
#include "sga/sparse/sparse_attention.hpp"

namespace sga {

/// Block-sparse attention as a tape op. `store`, when given, receives the
/// kept-tile weights of the latest forward evaluation.
template <std::floating_point T>
typename GradTape<T>::Var sparse_attention_var(
    GradTape<T>& tape, typename GradTape<T>::Var q, typename GradTape<T>::Var k,
    typename GradTape<T>::Var v, std::shared_ptr<const SparsityPlan> plan,
    std::shared_ptr<const BlockPartition> query_part, std::shared_ptr<const BlockPartition> key_part,
    bool causal, std::shared_ptr<BlockSparseWeights<T>> store = nullptr) {
  if (!store) store = std::make_shared<BlockSparseWeights<T>>();
  using Tape = GradTape<T>;
  typename Tape::ForwardFn fwd = [=](const Tape& t) {
    ExtraMask extra;
    extra.causal = causal;
    auto res = sparse_attention(t.value(q), t.value(k), t.value(v), *plan, *query_part, *key_part,
                                extra);
    *store = std::move(res.weights);
    return std::move(res.output);
  };
  typename Tape::BackwardFn bwd = [=](Tape& t, const Array<T>& g) {
    auto grads = sparse_attention_backward(t.value(q), t.value(k), t.value(v), *store, g);
    t.accumulate(q, grads.dq);
    t.accumulate(k, grads.dk);
    t.accumulate(v, grads.dv);
  };
  return tape.custom({q, k, v}, std::move(fwd), std::move(bwd));
}

}  // namespace sga
