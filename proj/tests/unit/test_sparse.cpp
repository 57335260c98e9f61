// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace sga;
using sga::test::random_array;

TEST(GradCheck, EveryPrimitive) {
  for (const auto& e : oracle::primitive_grad_errors(10, 21)) {
    EXPECT_LE(e.error, 1e-4) << e.name;
  }
}

TEST(DenseAttention, RowsStochasticAndMatchOracle) {
  Rng rng(1);
  const auto q = random_array<double>({6, 4}, rng), k = random_array<double>({7, 4}, rng),
             v = random_array<double>({7, 3}, rng);
  const auto res = dense_attention(q, k, v);
  std::vector<std::vector<bool>> all(6, std::vector<bool>(7, true));
  EXPECT_LE(max_abs_diff(res.output, test::naive_attention(q, k, v, all)), 1e-12);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += res.weights(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(dense_score_flops(6, 7, 4), 2u * 6 * 7 * 4);
}

TEST(DenseAttention, BackwardMatchesFiniteDifferences) {
  using T = oracle::Tape;
  AttentionMask m(5, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = i + 1; j < 5; ++j) m.set(i, j, false);
  }
  auto op = [m](T& t, const std::vector<oracle::Var>& v) {
    auto s = t.scale(t.matmul_nt(v[0], v[1]), 0.5);
    return t.matmul(t.masked_softmax(s, m), v[2]);
  };
  EXPECT_LE(oracle::check_op(op, {{5, 4}, {5, 4}, {5, 2}}, {5, 2}, 5, 3), 1e-4);
}

TEST(Partition, ContiguousBlocks) {
  const auto p = BlockPartition::contiguous(16, 4);
  for (std::size_t l = 0; l < 16; ++l) EXPECT_EQ(p.block_of(l), l * 4 / 16);
  EXPECT_EQ(p.tokens(3), (std::vector<std::size_t>{12, 13, 14, 15}));
  EXPECT_THROW(BlockPartition::contiguous(10, 4), ShapeError);
}

TEST(Partition, TilesCoverGridOnce) {
  const auto p = partition(64, 4, PartitionMode::tile_2d, GridDims{8, 8});
  std::vector<int> seen(64, 0);
  for (std::size_t b = 0; b < 4; ++b) {
    for (auto t : p.tokens(b)) seen[t]++;
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(p.block_of(0), p.block_of(9));
  EXPECT_NE(p.block_of(0), p.block_of(4));
}

TEST(BlockAffinity, Examples) {
  const auto a = Array<float>({4, 4}, 0.25f);
  const auto b = block_affinity(a, 2);
  for (float v : b.matrix.values()) EXPECT_FLOAT_EQ(v, 0.25f);
  EXPECT_THROW(block_affinity(Array<float>({6, 6}), 4), ShapeError);
}

TEST(BlockAffinity, MatchesBruteForce) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = t % 2 ? 64 : 8, L = t % 2 ? 256 : 32;
    const auto a = test::random_stochastic<float>(L, L, rng);
    const auto b = block_affinity(a, n);
    EXPECT_LE(max_abs_diff(b.matrix.cast<double>(), oracle::brute_block_means(a, n)), 1e-6);
    const auto part = BlockPartition::contiguous(L, n);
    EXPECT_LE(max_abs_diff(block_affinity(a, part, part).matrix, b.matrix), 1e-6f);
  }
}

TEST(BlockAffinity, RowSumsOfStochasticMapAreOneOverBlockSize) {
  Rng rng(3);
  const auto a = test::random_stochastic<double>(32, 32, rng);
  const auto b = block_affinity(a, 4);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t t = 0; t < 4; ++t) s += b.matrix(r, t);
    EXPECT_NEAR(s, 1.0 / 8.0, 1e-12);
  }
}

TEST(SelectPlan, NeighbourhoodPlusTopK) {
  Array<float> b({6, 6});
  b(0, 4) = 0.9f;
  b(0, 3) = 0.5f;
  b(0, 5) = 0.5f;
  const auto plan = select_plan(BlockAffinity<float>{b}, 2, 1);
  EXPECT_EQ(plan.kept[0], (std::vector<std::size_t>{0, 1, 3, 4}));  // tie 3 vs 5 goes to 3
  EXPECT_EQ(plan.kept[5].size(), 4u);
  validate_plan(plan);
}

TEST(SelectPlan, SparsityAtPaperScale) {
  Rng rng(4);
  const auto plan = oracle::random_plan(64, 1, 3, rng);
  EXPECT_LE(plan.kept_total(), 6u * 64u);
  EXPECT_EQ(plan.kept_total(), 62u * 6u + 2u * 5u);
  EXPECT_DOUBLE_EQ(sparsity_ratio(plan), double(plan.kept_total()) / (64.0 * 64.0));
}

TEST(SelectPlan, PropertyKeptSizeAndNeighbourhood) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(20), r = rng.below(3), k = rng.below(5);
    const auto plan = oracle::random_plan(n, r, k, rng);
    for (std::size_t q = 0; q < n; ++q) {
      const auto nb = neighborhood(q, r, n);
      for (auto b : nb) EXPECT_TRUE(plan.keeps(q, b));
      EXPECT_EQ(plan.kept[q].size(), nb.size() + std::min(k, n - nb.size()));
    }
  }
}

TEST(SelectPlan, FullPlanKeepsEverything) {
  const auto p = full_plan(5);
  EXPECT_EQ(p.kept_total(), 25u);
  EXPECT_DOUBLE_EQ(sparsity_ratio(p), 1.0);
}

TEST(SelectPlan, JsonRoundTrip) {
  Rng rng(6);
  auto p = oracle::random_plan(8, 1, 2, rng);
  p.layer = 2;
  p.head = 1;
  EXPECT_EQ(plan_from_json(plan_to_json(p)), p);
}

TEST(SparseAttention, MatchesExpandedMaskOracle) {
  Rng rng(7);
  for (int t = 0; t < 30; ++t) {
    const std::size_t L = std::vector<std::size_t>{16, 64, 256}[t % 3];
    const std::size_t n = L / 4, d = 8;
    const auto plan = oracle::random_plan(n, rng.below(2), rng.below(4), rng);
    const auto part = BlockPartition::contiguous(L, n);
    const bool causal = t % 2 == 1;
    const auto q = random_array<double>({L, d}, rng), k = random_array<double>({L, d}, rng),
               v = random_array<double>({L, d}, rng);
    ExtraMask extra;
    extra.causal = causal;
    const auto res = sparse_attention(q, k, v, plan, part, part, extra);
    const auto keep = oracle::expanded_keep(plan, part, part, causal);
    EXPECT_LE(max_abs_diff(res.output, test::naive_attention(q, k, v, keep)), 1e-10);
    EXPECT_EQ(res.score_flops, sparse_score_flops(plan, L, L, d));
    EXPECT_LE(max_abs_diff(res.weights.to_dense(),
                           dense_attention(q, k, v, oracle::to_mask(keep)).weights),
              1e-10);
  }
}

TEST(SparseAttention, FullPlanEqualsDense) {
  Rng rng(8);
  const auto q = random_array<float>({32, 8}, rng), k = random_array<float>({32, 8}, rng),
             v = random_array<float>({32, 8}, rng);
  const auto part = BlockPartition::contiguous(32, 4);
  const auto s = sparse_attention(q, k, v, full_plan(4), part, part);
  EXPECT_LE(max_abs_diff(s.output, dense_attention(q, k, v).output), 1e-5f);
  EXPECT_EQ(s.score_flops, dense_score_flops(32, 32, 8));
}

TEST(SparseAttention, FlopsMatchSparsity) {
  Rng rng(9);
  const auto plan = oracle::random_plan(64, 1, 3, rng);
  const std::uint64_t L = 4096, d = 64;
  EXPECT_EQ(sparse_score_flops(plan, L, L, d) * 64 * 64,
            dense_score_flops(L, L, d) * plan.kept_total());
}

TEST(SparseAttention, DegenerateCausalRowRaises) {
  SparsityPlan plan = full_plan(2);
  plan.kept[0] = {1};  // query block 0 only sees later keys
  const auto part = BlockPartition::contiguous(4, 2);
  ExtraMask extra;
  extra.causal = true;
  Array<float> x({4, 2}, 1.0f);
  EXPECT_THROW(sparse_attention(x, x, x, plan, part, part, extra), DegenerateRowError);
}

TEST(VariantPlans, KindsAreValid) {
  VariantParams params;
  params.blocks = 16;
  for (auto kind : {PlanKind::full, PlanKind::local, PlanKind::sliding, PlanKind::random,
                    PlanKind::global}) {
    const auto p = variant_plan(kind, params, 3);
    EXPECT_EQ(p.blocks, 16u) << to_string(kind);
    for (std::size_t r = 0; r < 16; ++r) EXPECT_TRUE(p.keeps(r, r)) << to_string(kind);
  }
  EXPECT_EQ(variant_plan(PlanKind::local, params, 0).kept_total(), 16u * 3u - 2u);
}
