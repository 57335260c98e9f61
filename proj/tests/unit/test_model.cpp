// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace sga;

namespace {

struct Inputs {
  TokenGrid x, p;
  std::vector<std::size_t> prev;
};

Inputs random_inputs(const ModelConfig& cfg, GridDims g, Rng& rng) {
  Inputs in{test::random_tokens(g, cfg.vocab, rng), test::random_tokens(g, cfg.map_vocab, rng), {}};
  const auto target = test::random_tokens(g, cfg.vocab, rng);
  in.prev = decoder_inputs(target, cfg);
  return in;
}

}  // namespace

TEST(Model, FullPlansMatchDenseModel) {
  const auto cfg = test::tiny_config();
  for (GridDims g : {cfg.low, cfg.high}) {
    const auto w = init_weights<double>(cfg, g, 3);
    Rng rng(1);
    const auto in = random_inputs(cfg, g, rng);
    const auto plans = ModelPlans::uniform(cfg, full_plan(cfg.blocks));
    const auto dense = model_forward(in.x, in.p, in.prev, w);
    const auto sparse = model_forward(in.x, in.p, in.prev, w, &plans);
    EXPECT_LE(max_abs_diff(dense.logits, sparse.logits), 1e-10);
    EXPECT_LE(max_abs_diff(dense.memory, sparse.memory), 1e-10);
  }
}

TEST(Model, DecoderIsCausal) {
  auto cfg = test::tiny_config();
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto w = init_weights<float>(cfg, cfg.high, 10 + t);
    const std::size_t l = 1 + rng.below(cfg.high.size() - 1);
    EXPECT_EQ(oracle::causality_violation(w, nullptr, l, rng), 0.0) << "dense, l=" << l;
    const auto plans = ModelPlans::uniform(cfg, oracle::random_plan(cfg.blocks, 0, 1, rng));
    EXPECT_EQ(oracle::causality_violation(w, &plans, l, rng), 0.0) << "sparse, l=" << l;
  }
}

TEST(Model, LaterTokensDoChangeLaterLogits) {
  const auto cfg = test::tiny_config();
  const auto w = init_weights<double>(cfg, cfg.low, 4);
  Rng rng(3);
  auto in = random_inputs(cfg, cfg.low, rng);
  const auto memory = encoder_forward(in.x, in.p, w).features;
  const auto a = decoder_forward(in.prev, memory, w).logits;
  in.prev[5] = (in.prev[5] + 1) % cfg.vocab;
  const auto b = decoder_forward(in.prev, memory, w).logits;
  double diff = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) diff = std::max(diff, std::abs(a(5, c) - b(5, c)));
  EXPECT_GT(diff, 0.0);
}

TEST(Model, LogitShapeAndStochasticMaps) {
  const auto cfg = test::tiny_config();
  const auto w = init_weights<float>(cfg, cfg.low, 5);
  Rng rng(4);
  const auto in = random_inputs(cfg, cfg.low, rng);
  const auto out = guiding_forward(in.x, in.p, in.prev, w);
  EXPECT_EQ(out.logits.shape(), (Shape{16, cfg.vocab}));
  ASSERT_EQ(out.enc_maps.size(), cfg.layers_enc);
  ASSERT_EQ(out.enc_maps[0].size(), cfg.heads);
  for (const auto* site : {&out.enc_maps, &out.dec_self_maps, &out.dec_cross_maps}) {
    for (const auto& layer : *site) {
      for (const auto& m : layer) {
        for (std::size_t i = 0; i < m.rows(); ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j);
          EXPECT_NEAR(s, 1.0, 1e-5);
        }
      }
    }
  }
}

TEST(Model, RejectsBadDecoderSequence) {
  const auto cfg = test::tiny_config();
  const auto w = init_weights<float>(cfg, cfg.low, 6);
  Rng rng(5);
  auto in = random_inputs(cfg, cfg.low, rng);
  const auto memory = encoder_forward(in.x, in.p, w).features;
  auto bad = in.prev;
  bad[0] = 0;
  EXPECT_THROW(decoder_forward(bad, memory, w), SequenceError);
  bad = in.prev;
  bad.pop_back();
  EXPECT_THROW(decoder_forward(bad, memory, w), ShapeError);
}

TEST(Model, LossGradientMatchesFiniteDifferences) {
  auto cfg = test::tiny_config();
  cfg.layers_enc = 1;
  cfg.layers_dec = 1;
  EXPECT_LE(oracle::model_loss_grad_error(cfg, cfg.low, 2, 7), 1e-4);
}

TEST(Model, CheckpointRoundTrip) {
  const auto cfg = test::tiny_config();
  const auto w = init_weights<float>(cfg, cfg.low, 8);
  const auto dir = std::filesystem::temp_directory_path() / "sga_test_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, w);
  const auto back = load_checkpoint(dir);
  EXPECT_EQ(model_config_to_json(back.config), model_config_to_json(w.config));
  EXPECT_EQ(back.grid, w.grid);
  std::size_t n = 0;
  zip_slots([&](const std::string& name, const DenseArray& a, const DenseArray& b) {
    EXPECT_EQ(a, b) << name;
    ++n;
  }, w.p, back.p);
  EXPECT_GT(n, 10u);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint(dir), IoError);
}

TEST(Model, ConfigJson) {
  const auto cfg = test::tiny_config();
  const auto j = model_config_to_json(cfg);
  EXPECT_EQ(model_config_to_json(model_config_from_json(j)), j);
  auto bad = j;
  bad["dropout"] = 0.1;
  EXPECT_THROW(model_config_from_json(bad), ConfigError);
  bad = j;
  bad["heads"] = 3;
  EXPECT_THROW(model_config_from_json(bad), ConfigError);
  bad = j;
  bad["blocks"] = 5;
  EXPECT_THROW(model_config_from_json(bad), ConfigError);
}

TEST(Model, InitIsSeeded) {
  const auto cfg = test::tiny_config();
  const auto a = init_weights<float>(cfg, cfg.low, 9), b = init_weights<float>(cfg, cfg.low, 9),
             c = init_weights<float>(cfg, cfg.low, 10);
  EXPECT_EQ(a.p.e_im, b.p.e_im);
  EXPECT_NE(a.p.e_im, c.p.e_im);
}

TEST(Model, GuidingInitInterpolatesPositionsOnly) {
  const auto cfg = test::tiny_config();
  const auto low = init_weights<float>(cfg, cfg.low, 11);
  const auto high = init_from_guiding(low, cfg.high, &cfg);
  EXPECT_EQ(high.grid, cfg.high);
  EXPECT_EQ(high.p.e_im, low.p.e_im);
  EXPECT_EQ(high.p.e_pos.rows(), cfg.high.size());
  // Corners are copied exactly.
  for (std::size_t c = 0; c < cfg.d; ++c) {
    EXPECT_EQ(high.p.e_pos(0, c), low.p.e_pos(0, c));
    EXPECT_EQ(high.p.e_pos(63, c), low.p.e_pos(15, c));
  }
  const auto same = init_from_guiding(low, cfg.low, &cfg);
  EXPECT_EQ(same.p.e_pos, low.p.e_pos);
  auto other = cfg;
  other.d = 32;
  EXPECT_THROW(init_from_guiding(low, cfg.high, &other), ConfigError);
}

TEST(Model, InterpolationOfLinearFieldIsExact) {
  Array<double> t({4, 1});
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t x = 0; x < 2; ++x) t(y * 2 + x, 0) = 3.0 * y + 2.0 * x;
  }
  const auto out = interpolate_positions(t, {2, 2}, {3, 5});
  for (std::size_t y = 0; y < 3; ++y) {
    for (std::size_t x = 0; x < 5; ++x) {
      EXPECT_NEAR(out(y * 5 + x, 0), 3.0 * y / 2.0 + 2.0 * x / 4.0, 1e-12);
    }
  }
}

TEST(Model, PlansJsonRoundTrip) {
  const auto cfg = test::tiny_config();
  Rng rng(12);
  auto plans = ModelPlans::uniform(cfg, oracle::random_plan(cfg.blocks, 1, 1, rng));
  plans.dec_cross[0][1] = oracle::random_plan(cfg.blocks, 0, 2, rng);
  const auto j = model_plans_to_json(plans);
  const auto back = model_plans_from_json(j);
  back.check(cfg);
  EXPECT_EQ(model_plans_to_json(back), j);
  EXPECT_EQ(back.dec_cross[0][1].kept, plans.dec_cross[0][1].kept);
  EXPECT_THROW(model_plans_from_json(nlohmann::json::object()), ConfigError);
}
