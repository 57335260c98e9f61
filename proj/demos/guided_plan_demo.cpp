// SPDX-License-Identifier: Apache-2.0
// Pools a low-resolution attention map into a block plan and runs the
// high-resolution attention with it, next to the dense kernel.
#include <chrono>
#include <cstdio>

#include "sga/sga.hpp"

using namespace sga;

int main(int argc, char** argv) {
  const std::size_t L = argc > 1 ? std::stoul(argv[1]) : 4096;
  const std::size_t d = 64, blocks = 64, k = 3, radius = 1;
  Rng rng(1);

  // Stand-in for a guiding model's map at a quarter of the resolution.
  const std::size_t low = L / 4;
  Array<float> map({low, low});
  for (std::size_t i = 0; i < low; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < low; ++j) s += (map(i, j) = float(rng.uniform()));
    for (std::size_t j = 0; j < low; ++j) map(i, j) = float(map(i, j) / s);
  }
  const SparsityPlan plan = select_plan(block_affinity(map, blocks), k, radius);
  std::printf("plan: %zu of %zu blocks kept (%.2f%%)\n", plan.kept_total(), blocks * blocks,
              100.0 * sparsity_ratio(plan));

  Array<float> q({L, d}), kk({L, d}), v({L, d});
  for (auto* a : {&q, &kk, &v}) {
    for (auto& x : a->values()) x = float(rng.normal());
  }
  const auto part = BlockPartition::contiguous(L, blocks);

  auto t0 = std::chrono::steady_clock::now();
  const auto sparse = sparse_attention(q, kk, v, plan, part, part);
  auto t1 = std::chrono::steady_clock::now();
  const auto dense = dense_attention(q, kk, v);
  auto t2 = std::chrono::steady_clock::now();

  const double ms_sparse = std::chrono::duration<double, std::milli>(t1 - t0).count();
  const double ms_dense = std::chrono::duration<double, std::milli>(t2 - t1).count();
  std::printf("score flops: sparse %llu, dense %llu\n", (unsigned long long)sparse.score_flops,
              (unsigned long long)dense_score_flops(L, L, d));
  std::printf("time: sparse %.1f ms, dense %.1f ms\n", ms_sparse, ms_dense);
  std::printf("peak score entries: sparse %zu, dense %zu\n", sparse.peak_score_entries, L * L);
  return 0;
}
