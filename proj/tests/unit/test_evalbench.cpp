// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <deque>
#include <numeric>

#include "test_util.hpp"

using namespace sga;

namespace {

std::size_t components4(const MaskMap& m) {
  std::vector<int> seen(m.bits.size(), 0);
  std::size_t comps = 0;
  for (std::size_t s = 0; s < m.bits.size(); ++s) {
    if (!m[s] || seen[s]) continue;
    ++comps;
    std::deque<std::size_t> q{s};
    seen[s] = 1;
    while (!q.empty()) {
      const std::size_t c = q.front();
      q.pop_front();
      const std::size_t y = c / m.width, x = c % m.width;
      const std::ptrdiff_t dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        const std::ptrdiff_t ny = std::ptrdiff_t(y) + dy[d], nx = std::ptrdiff_t(x) + dx[d];
        if (ny < 0 || nx < 0 || ny >= std::ptrdiff_t(m.height) || nx >= std::ptrdiff_t(m.width)) continue;
        const std::size_t n = std::size_t(ny) * m.width + std::size_t(nx);
        if (m[n] && !seen[n]) {
          seen[n] = 1;
          q.push_back(n);
        }
      }
    }
  }
  return comps;
}

SyntheticTask tiny_task(TaskKind kind = TaskKind::mirror) {
  SyntheticTask t;
  t.kind = kind;
  t.grid = {4, 4};
  t.vocab = 6;
  t.map_vocab = 2;
  return t;
}

// Windowed SSIM written directly from the definition.
double ssim_direct(const ImageGrid& a, const ImageGrid& b) {
  double g[11][11], z = 0.0;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 11; ++j) z += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  }
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y + 11 <= a.height; ++y) {
    for (std::size_t x = 0; x + 11 <= a.width; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double w = g[i][j] / z, u = a.at(y + i, x + j), v = b.at(y + i, x + j);
          ma += w * u;
          mb += w * v;
          saa += w * u * u;
          sbb += w * v * v;
          sab += w * u * v;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  }
  return total / double(n);
}

ImageGrid random_gray(std::size_t h, std::size_t w, Rng& rng) {
  ImageGrid g(h, w, 1);
  for (auto& p : g.pixels) p = static_cast<float>(rng.uniform());
  return g;
}

}  // namespace

TEST(Masks, FractionBoundsAndConnectivity) {
  for (GridDims g : {GridDims{8, 8}, GridDims{16, 16}, GridDims{5, 9}}) {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const auto m = free_form_mask(g, s);
      EXPECT_GE(m.fraction(), 0.1) << s;
      EXPECT_LE(m.fraction(), 0.6) << s;
      EXPECT_EQ(components4(m), 1u) << s;
    }
  }
  EXPECT_EQ(free_form_mask({8, 8}, 3), free_form_mask({8, 8}, 3));
  EXPECT_THROW(free_form_mask({1, 8}, 0), ShapeError);
}

TEST(Masks, WithinStaysInsideAllowed) {
  MaskMap allowed(8, 8);
  for (std::size_t y = 4; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) allowed.set(y, x, true);
  }
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto m = free_form_mask_within(allowed, s);
    EXPECT_TRUE(m.any());
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
      if (m[i]) {
        EXPECT_TRUE(allowed[i]);
      }
    }
  }
}

TEST(Tasks, GeneratorsSatisfyConstraints) {
  for (auto kind : {TaskKind::mirror, TaskKind::constant_region, TaskKind::copy_corner}) {
    SyntheticTask t;
    t.kind = kind;
    t.grid = {8, 8};
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
      const auto s = generate_sample(t, rng);
      ASSERT_TRUE(satisfies_task(t, s)) << to_string(kind);
      if (kind == TaskKind::mirror) {
        for (std::size_t y = 0; y < 4; ++y) {
          for (std::size_t x = 0; x < 8; ++x) ASSERT_EQ(s.image.at(7 - y, x), s.image.at(y, x));
        }
      }
    }
  }
}

TEST(Tasks, ConstraintCheckerRejectsBrokenSample) {
  SyntheticTask t;
  Rng rng(2);
  auto s = generate_sample(t, rng);
  s.image.at(7, 0) = (s.image.at(0, 0) + 1) % Token(t.vocab);
  EXPECT_FALSE(satisfies_task(t, s));
}

TEST(Train, ZeroLearningRateLeavesWeightsUnchanged) {
  const auto cfg = test::tiny_config();
  const auto task = tiny_task();
  const auto init = init_weights<float>(cfg, task.grid, 1);
  TrainOptions o;
  o.steps = 5;
  o.lr = 0.0;
  const auto r = train(init, task_source(task), o);
  zip_slots([](const std::string& n, const DenseArray& a, const DenseArray& b) { EXPECT_EQ(a, b) << n; },
            init.p, r.weights.p);
}

TEST(Train, InitialLossNearUniform) {
  auto cfg = test::tiny_config();
  cfg.vocab = 16;
  auto task = tiny_task();
  task.vocab = 16;
  double acc = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto w = init_weights<float>(cfg, task.grid, s);
    Rng rng(s);
    acc += training_loss(w, sample_example(task, rng));
  }
  EXPECT_NEAR(acc / 20.0, std::log(16.0), 0.5);
}

TEST(Train, BitIdenticalLossCurves) {
  const auto cfg = test::tiny_config();
  const auto task = tiny_task();
  TrainOptions o;
  o.steps = 10;
  o.seed = 4;
  o.batch = 2;
  for (auto opt : {OptimizerKind::sgd, OptimizerKind::adam}) {
    o.optimizer = opt;
    const auto a = train(init_weights<float>(cfg, task.grid, 2), task_source(task), o);
    const auto b = train(init_weights<float>(cfg, task.grid, 2), task_source(task), o);
    EXPECT_EQ(a.losses, b.losses);
    EXPECT_EQ(a.weights.p.w_out, b.weights.p.w_out);
  }
}

TEST(Train, DivergenceReportsStep) {
  const auto cfg = test::tiny_config();
  const auto task = tiny_task();
  TrainOptions o;
  o.steps = 50;
  o.lr = 1e30;
  o.clip = 0.0;
  try {
    train(init_weights<float>(cfg, task.grid, 2), task_source(task), o);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.step(), 1u);
  }
}

TEST(Train, MirrorLossImproves) {
  ModelConfig cfg;
  cfg.d = 64;
  cfg.heads = 4;
  cfg.layers_enc = 2;
  cfg.layers_dec = 2;
  cfg.vocab = 16;
  cfg.map_vocab = 2;
  cfg.ff_width = 128;
  cfg.blocks = 16;
  cfg.low = cfg.high = {8, 8};
  SyntheticTask task;
  TrainOptions o;
  o.steps = 1000;
  o.optimizer = OptimizerKind::adam;
  o.lr = 1e-3;
  for (std::uint64_t seed : {1, 2, 3}) {
    o.seed = seed;
    const auto r = train(init_weights<float>(cfg, task.grid, seed), task_source(task), o);
    const double first = std::accumulate(r.losses.begin(), r.losses.begin() + 500, 0.0) / 500;
    const double last = std::accumulate(r.losses.end() - 500, r.losses.end(), 0.0) / 500;
    EXPECT_LT(last, first) << "seed " << seed;
  }
}

TEST(Ablation, SharedBudgetAndDenseCeiling) {
  const auto cfg = test::tiny_config();
  const auto task = tiny_task();
  AblationBudget b;
  b.train.steps = 3;
  b.seeds = {1, 2};
  b.eval_instances = 4;
  b.guide_instances = 2;
  const auto rep = run_ablation({"local", "guided", "oracle"}, task, cfg, b);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.steps, 3u);
    EXPECT_EQ(row.accuracy.size(), 2u);
    EXPECT_LE(row.sparsity, 1.0);
  }
  EXPECT_EQ(rep.find("dense"), nullptr);
  EXPECT_NE(ablation_to_text(rep).find("guided"), std::string::npos);
  EXPECT_EQ(ablation_to_json(rep)["rows"].size(), 3u);
}

TEST(Ablation, OraclePlansCoverMirrorSource) {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.layers_enc = 2;
  cfg.layers_dec = 1;
  cfg.vocab = 16;
  cfg.map_vocab = 2;
  cfg.blocks = 16;
  cfg.radius = 1;
  cfg.k = 1;
  cfg.low = cfg.high = {8, 8};
  SyntheticTask task;
  const auto plans = oracle_plans(task, cfg);
  const auto dep = task_dependencies(task);
  const auto part = BlockPartition::contiguous(64, 16);
  for (std::size_t l = 0; l < 64; ++l) {
    if (!dep[l]) continue;
    EXPECT_TRUE(plans.dec_cross[0][0].keeps(part.block_of(l), part.block_of(*dep[l]))) << l;
  }
}

TEST(Rollout, IdentityAndStochastic) {
  const auto id = Array<double>::identity(5);
  EXPECT_LE(max_abs_diff(attention_rollout<double>({id}), id), 1e-12);
  EXPECT_LE(max_abs_diff(attention_rollout<double>({id, id}), id), 1e-12);
  Rng rng(1);
  std::vector<Array<double>> layers;
  for (int i = 0; i < 3; ++i) layers.push_back(test::random_stochastic<double>(6, 6, rng));
  const auto r = attention_rollout(layers);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += r(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  auto with_id = layers;
  with_id.push_back(Array<double>::identity(6));
  EXPECT_LE(max_abs_diff(attention_rollout(with_id), r), 1e-12);
}

TEST(Rollout, MatchesExplicitProduct) {
  Rng rng(2);
  const auto a = test::random_stochastic<double>(4, 4, rng), b = test::random_stochastic<double>(4, 4, rng);
  auto fix = [](const Array<double>& m) {
    Array<double> r = m;
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) r(i, j) = 0.5 * m(i, j) + (i == j ? 0.5 : 0.0);
    }
    return r;
  };
  EXPECT_LE(max_abs_diff(attention_rollout<double>({a, b}), test::naive_matmul(fix(b), fix(a))), 1e-12);
}

TEST(Rollout, RejectsNonStochastic) {
  EXPECT_THROW(attention_rollout<double>({Array<double>({3, 3}, 0.5)}), ValidationError);
  auto neg = Array<double>::identity(2);
  neg(0, 1) = -0.1;
  neg(0, 0) = 1.1;
  EXPECT_THROW(attention_rollout<double>({neg}), ValidationError);
}

TEST(Rollout, HeadAverage) {
  const auto a = Array<double>::identity(2), b = Array<double>({2, 2}, 0.5);
  const auto m = head_average<double>({a, b});
  EXPECT_DOUBLE_EQ(m(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(m(0, 1), 0.25);
}

TEST(Ssim, SelfSimilarityAndOracle) {
  Rng rng(3);
  const auto a = random_gray(20, 24, rng), b = random_gray(20, 24, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-6);
  EXPECT_NEAR(ssim(a, b), ssim_direct(a, b), 1e-6);
  EXPECT_LT(ssim(a, b), 0.2);
  EXPECT_THROW(ssim(a, random_gray(20, 23, rng)), ShapeError);
  EXPECT_THROW(ssim(random_gray(10, 24, rng), random_gray(10, 24, rng)), ShapeError);
}

TEST(Ssim, BinaryComplementIsNonPositive) {
  Rng rng(4);
  ImageGrid a(16, 16, 1), b(16, 16, 1);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    a.pixels[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
    b.pixels[i] = 1.0f - a.pixels[i];
  }
  EXPECT_LE(ssim(a, b), 0.0);
  EXPECT_NEAR(ssim(a, b), ssim_direct(a, b), 1e-6);
}

TEST(Ssim, RgbConvertedByMean) {
  Rng rng(5);
  ImageGrid rgb(12, 12, 3);
  for (auto& p : rgb.pixels) p = static_cast<float>(rng.uniform());
  const auto g = to_grayscale(rgb);
  EXPECT_NEAR(g.at(3, 4), (rgb.at(3, 4, 0) + rgb.at(3, 4, 1) + rgb.at(3, 4, 2)) / 3.0f, 1e-6);
  EXPECT_NEAR(ssim(rgb, g), 1.0, 1e-6);
}

TEST(Bench, FlopsExactAndDenseIncluded) {
  BenchOptions o;
  o.lengths = {256};
  o.d = 16;
  o.blocks = 16;
  o.repeats = 5;
  const auto rep = benchmark(o);
  const auto* dense = rep.find(256, "dense");
  ASSERT_NE(dense, nullptr);
  EXPECT_EQ(dense->score_flops, 2u * 256 * 256 * 16);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.runs_ms.size(), 5u);
    EXPECT_DOUBLE_EQ(row.flop_ratio, double(row.score_flops) / double(dense->score_flops));
    EXPECT_DOUBLE_EQ(row.flop_ratio, row.sparsity);
  }
  o.repeats = 4;
  EXPECT_THROW(benchmark(o), ParameterError);
}

TEST(Bench, GuidedPlanAtPaperScaleIsUnderTenPercent) {
  BenchOptions o;
  const auto plan = bench_plan(PlanKind::guided, o);
  EXPECT_LE(sparsity_ratio(plan), 6.0 / 64.0);
  EXPECT_EQ(sparse_score_flops(plan, 4096, 4096, 64) * 4096,
            dense_score_flops(4096, 4096, 64) * plan.kept_total());
}

TEST(Bench, Median) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
}

TEST(Diversity, HammingOverMaskedPositions) {
  MaskMap m(1, 4);
  m.bits = {1, 1, 0, 0};
  CandidateSet s;
  TokenGrid a(1, 4, 3), b(1, 4, 3);
  a.tokens = {0, 1, 2, 2};
  b.tokens = {0, 2, 0, 0};
  s.items = {{a, 0.0}, {b, 0.0}};
  EXPECT_DOUBLE_EQ(hamming_diversity(s, m), 0.5);
  s.items.push_back({a, 0.0});
  EXPECT_DOUBLE_EQ(hamming_diversity(s, m), (0.5 + 0.0 + 0.5) / 3.0);
  EXPECT_DOUBLE_EQ(hamming_diversity(CandidateSet{{{a, 0.0}}}, m), 0.0);
}
