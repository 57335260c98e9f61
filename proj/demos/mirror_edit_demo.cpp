// SPDX-License-Identifier: Apache-2.0
// Trains a small model on the mirror task, then fills a masked region with
// ranked candidates and prints them as token grids.
#include <cstdio>

#include "sga/sga.hpp"

using namespace sga;

namespace {

void print_grid(const TokenGrid& g, const MaskMap* mask) {
  for (std::size_t y = 0; y < g.height; ++y) {
    for (std::size_t x = 0; x < g.width; ++x) {
      const bool m = mask && mask->at(y, x);
      if (g.is_mask(y * g.width + x)) {
        std::printf("  . ");
      } else {
        std::printf(m ? "%3u*" : "%3u ", unsigned(g.at(y, x)));
      }
    }
    std::printf("\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t steps = argc > 1 ? std::stoul(argv[1]) : 1500;
  ModelConfig cfg;
  cfg.d = 32;
  cfg.heads = 2;
  cfg.layers_enc = 2;
  cfg.layers_dec = 1;
  cfg.vocab = 8;
  cfg.map_vocab = 2;
  cfg.ff_width = 64;
  cfg.blocks = 16;
  cfg.k = 1;
  cfg.radius = 1;
  cfg.low = cfg.high = {8, 8};
  const SyntheticTask task{TaskKind::mirror, cfg.low, cfg.vocab, cfg.map_vocab, 5};

  TrainOptions opts;
  opts.steps = steps;
  opts.lr = 1e-3;
  opts.batch = 4;
  opts.optimizer = OptimizerKind::adam;
  opts.seed = 1;
  const ModelPlans plans = oracle_plans(task, cfg);
  auto res = train(init_weights<float>(cfg, cfg.low, 1), task_source(task), opts, fixed_plans(plans),
                   [&](std::size_t s, double loss) {
                     if ((s + 1) % 250 == 0) std::printf("step %zu loss %.4f\n", s + 1, loss);
                   });

  Rng rng(7);
  const TaskSample sample = generate_sample(task, rng);
  const MaskMap mask = free_form_mask_within(sample.maskable, 3);
  std::printf("\ninput with %zu masked tokens:\n", mask.count());
  print_grid(apply_mask(sample.image, mask), nullptr);

  SamplingOptions s;
  s.k = 3;
  s.n_samples = 20;
  s.n_keep = 3;
  s.seed = 11;
  const CandidateSet set = autoregressive_edit(sample.image, sample.semantic, mask, res.weights, &plans, s);
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::printf("\ncandidate %zu  log-prob %.3f  mirror-consistent: %s\n", i, set[i].logprob,
                satisfies_task(task, TaskSample{set[i].tokens, sample.semantic, sample.maskable}) ? "yes" : "no");
    print_grid(set[i].tokens, &mask);
  }
  return 0;
}
