// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL line per criterion. `--only N` runs one.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "sga/cli/commands.hpp"

using namespace sga;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sga_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

// Small end-to-end pipeline; sampling is left at its defaults.
nlohmann::json pipeline_json(const fs::path& out) {
  return {
      {"seed", 11},
      {"out", out.string()},
      {"model",
       {{"d", 32}, {"heads", 2}, {"layers_enc", 1}, {"layers_dec", 1}, {"vocab", 8},
        {"map_vocab", 2}, {"ff_width", 64}, {"blocks", 16}, {"k", 2}, {"radius", 1},
        {"low", {{"h", 8}, {"w", 8}}}, {"high", {{"h", 16}, {"w", 16}}}}},
      {"quantizer", {{"patch", 2}, {"channels", 3}, {"d", 16}, {"iterations", 20},
                     {"synthetic_images", 2}}},
      {"train", {{"steps", 30}, {"lr", 0.001}, {"batch", 2}, {"optimizer", "adam"}}},
      {"sga", {{"steps", 10}}},
  };
}

Outcome run_pipeline(const RunConfig& c, std::initializer_list<const char*> cmds) {
  std::ostringstream err;
  for (const char* cmd : cmds) {
    const int rc = run_command(cmd, c, err);
    if (rc != kExitOk) return {false, std::string(cmd) + " exited " + std::to_string(rc) + ": " + err.str()};
  }
  return {true, ""};
}

// 1. Guided plans at N=64, radius 1, K=3 keep 62*6 + 2*5 blocks.
Outcome sparsity_ratio_claim() {
  const std::size_t n = 64, expected = 62 * 6 + 2 * 5;
  std::size_t plans = 0;
  double worst = 0.0;
  auto check = [&](const SparsityPlan& p) -> bool {
    validate_plan(p);
    ++plans;
    worst = std::max(worst, sparsity_ratio(p));
    return p.kept_total() == expected && sparsity_ratio(p) <= 6.0 / 64.0;
  };
  // Plans pooled from a guiding model's maps on a 16x16 grid (256 -> 64 blocks).
  ModelConfig cfg;
  cfg.d = 32;
  cfg.heads = 2;
  cfg.layers_enc = 2;
  cfg.layers_dec = 1;
  cfg.vocab = 16;
  cfg.map_vocab = 2;
  cfg.ff_width = 64;
  cfg.blocks = n;
  cfg.k = 3;
  cfg.radius = 1;
  cfg.low = cfg.high = {16, 16};
  const auto w = init_weights<float>(cfg, cfg.low, 1);
  Rng rng(2);
  SyntheticTask task{TaskKind::mirror, cfg.low, cfg.vocab, cfg.map_vocab, 3};
  const TrainExample ex = sample_example(task, rng);
  const auto maps = guiding_forward(apply_mask(ex.target, ex.mask), ex.semantic,
                                    decoder_inputs(ex.target, cfg), w);
  const auto geo = make_geometry(cfg, cfg.low);
  const ModelPlans mp =
      plans_from_maps(maps.enc_maps, maps.dec_self_maps, maps.dec_cross_maps, *geo.part, *geo.part, 3, 1);
  for (const auto* site : {&mp.enc_self, &mp.dec_self, &mp.dec_cross}) {
    for (const auto& layer : *site) {
      for (const auto& p : layer) {
        if (!check(p)) return {false, "plan keeps " + std::to_string(p.kept_total()) + " blocks"};
      }
    }
  }
  for (std::uint64_t s = 0; s < 20; ++s) {
    if (!check(bench_guided_plan(n, 3, 1, s))) return {false, "random-map plan count differs"};
  }
  return {true, std::to_string(plans) + " plans keep exactly " + std::to_string(expected) +
                    "/4096 blocks, ratio " + num(worst) + " <= " + num(6.0 / 64.0)};
}

// 2. Float sparse kernel against a double dense reference with the expanded mask.
Outcome oracle_equivalence() {
  Rng rng(20);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t L = std::vector<std::size_t>{16, 64, 256}[t % 3];
    const std::size_t n = std::vector<std::size_t>{4, 8, 16}[rng.below(3)];
    const std::size_t side = L == 16 ? 4 : L == 64 ? 8 : 16;
    const bool tiles = t % 4 >= 2 && (n == 4 || n == 16);
    const auto part = tiles ? partition(L, n, PartitionMode::tile_2d, GridDims{side, side})
                            : BlockPartition::contiguous(L, n);
    const auto plan = oracle::random_plan(n, rng.below(2), rng.below(4), rng);
    const bool causal = !tiles && t % 2 == 1;
    const std::size_t d = 1 + rng.below(16);
    const auto q = oracle::gaussian<double>({L, d}, rng), k = oracle::gaussian<double>({L, d}, rng),
               v = oracle::gaussian<double>({L, d}, rng);
    ExtraMask extra;
    extra.causal = causal;
    const auto res = sparse_attention(q.cast<float>(), k.cast<float>(), v.cast<float>(), plan, part, part, extra);
    const auto ref = dense_attention(q, k, v, oracle::to_mask(oracle::expanded_keep(plan, part, part, causal)));
    worst = std::max(worst, max_abs_diff(res.output.cast<double>(), ref.output));
  }
  return {worst <= 1e-5, "max |sparse - dense| over 200 instances = " + num(worst)};
}

// 3. Full plans reproduce the dense model.
Outcome degeneracy() {
  double worst = 0.0, control = std::numeric_limits<double>::infinity();
  Rng rng(30);
  for (int t = 0; t < 6; ++t) {
    ModelConfig cfg;
    cfg.d = 32;
    cfg.heads = t % 2 ? 4 : 2;
    cfg.layers_enc = 1 + t % 2;
    cfg.layers_dec = 1 + t / 3;
    cfg.vocab = 12;
    cfg.map_vocab = 3;
    cfg.ff_width = 48;
    cfg.blocks = 16;
    cfg.k = 1;
    cfg.radius = 1;
    cfg.low = {8, 8};
    cfg.high = {16, 16};
    const GridDims g = t % 2 ? cfg.high : cfg.low;
    const auto w = init_weights<float>(cfg, g, 40 + t);
    TokenGrid x(g.height, g.width, cfg.vocab), p(g.height, g.width, cfg.map_vocab), y(g.height, g.width, cfg.vocab);
    for (auto& v : x.tokens) v = Token(rng.below(cfg.vocab));
    for (auto& v : p.tokens) v = Token(rng.below(cfg.map_vocab));
    for (auto& v : y.tokens) v = Token(rng.below(cfg.vocab));
    const auto prev = decoder_inputs(y, cfg);
    const auto plans = ModelPlans::uniform(cfg, full_plan(cfg.blocks));
    const auto dense = model_forward(x, p, prev, w);
    const auto sparse = model_forward(x, p, prev, w, &plans);
    worst = std::max({worst, double(max_abs_diff(dense.logits, sparse.logits)),
                      double(max_abs_diff(dense.memory, sparse.memory))});
    // Control: a genuinely sparse plan must move the logits, so plans are not ignored.
    const auto local = ModelPlans::uniform(cfg, variant_plan(PlanKind::local, {cfg.blocks, 1, 0, 3}, 1));
    control = std::min(control, double(max_abs_diff(dense.logits, model_forward(x, p, prev, w, &local).logits)));
  }
  return {worst <= 1e-5 && control > 0.0,
          "max |full-plan - dense| over 6 models = " + num(worst) + ", local-plan control differs by >= " +
              num(control)};
}

// 4. Perturbing later decoder inputs leaves earlier logits bit-identical.
Outcome causality() {
  Rng rng(40);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    ModelConfig cfg;
    cfg.d = 16;
    cfg.heads = 1 + rng.below(2);
    cfg.layers_enc = 1;
    cfg.layers_dec = 1 + rng.below(2);
    cfg.vocab = 6;
    cfg.map_vocab = 2;
    cfg.ff_width = 24;
    cfg.blocks = 4 << rng.below(2);
    cfg.k = rng.below(2);
    cfg.radius = rng.below(2);
    cfg.low = {4, 4};
    cfg.high = {8, 8};
    const GridDims g = rng.below(2) ? cfg.high : cfg.low;
    const auto w = init_weights<float>(cfg, g, derive_seed(41, "causal", t));
    const std::size_t l = 1 + rng.below(g.size() - 1);
    std::optional<ModelPlans> plans;
    if (t % 2) plans = ModelPlans::uniform(cfg, oracle::random_plan(cfg.blocks, cfg.radius, cfg.k, rng));
    worst = std::max(worst, oracle::causality_violation(w, plans ? &*plans : nullptr, l, rng));
  }
  return {worst == 0.0, "max logit change before the perturbed position over 50 configs = " + num(worst)};
}

// 5. leakcheck through the command layer with the default quantizer.
Outcome leakage() {
  const fs::path dir = scratch("leak");
  auto j = pipeline_json(dir / "out");
  j.erase("quantizer");
  j["leakcheck"] = {{"trials", 100}};
  const RunConfig c = run_config_from_json(j);
  std::ostringstream err;
  const int rc = run_command("leakcheck", c, err);
  if (rc != kExitOk) return {false, "leakcheck exited " + std::to_string(rc) + ": " + err.str()};
  const auto rep = read_json(dir / "out" / "leakcheck" / "report.json");
  fs::remove_all(dir);
  const std::size_t leaked = rep["leaked_tokens"], trials = rep["trials"];
  return {leaked == 0 && trials == 100,
          std::to_string(leaked) + " leaked tokens over " + std::to_string(trials) + " trials"};
}

// 6. Finite-difference gradient checks.
Outcome gradients() {
  double worst = 0.0;
  std::string name;
  for (const auto& e : oracle::primitive_grad_errors(10, 60)) {
    if (e.error > worst) {
      worst = e.error;
      name = e.name;
    }
  }
  ModelConfig cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.layers_enc = 1;
  cfg.layers_dec = 1;
  cfg.vocab = 6;
  cfg.map_vocab = 2;
  cfg.ff_width = 24;
  cfg.blocks = 4;
  cfg.k = 1;
  cfg.radius = 0;
  cfg.low = {4, 4};
  cfg.high = {8, 8};
  const double model = oracle::model_loss_grad_error(cfg, cfg.low, 10, 61, 100);
  return {worst <= 1e-4 && model <= 1e-4,
          "worst primitive " + name + " " + num(worst) + ", 1-layer model loss " + num(model)};
}

// 7. Pooled block affinity against explicit block sums.
Outcome block_pooling() {
  Rng rng(70);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::size_t L = 256, n = 64;  // first instance: the 256 -> 64 setting
    if (t > 0) {
      L = std::vector<std::size_t>{16, 64, 256}[rng.below(3)];
      const auto divisors = std::vector<std::size_t>{1, 2, 4, 8, 16};
      do n = divisors[rng.below(divisors.size())]; while (L % n);
    }
    Array<float> a({L, L});
    for (std::size_t i = 0; i < L; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < L; ++j) s += (a(i, j) = float(rng.uniform()));
      for (std::size_t j = 0; j < L; ++j) a(i, j) = float(a(i, j) / s);
    }
    const auto b = block_affinity(a, n);
    worst = std::max(worst, max_abs_diff(b.matrix.template cast<double>(), oracle::brute_block_means(a, n)));
  }
  return {worst <= 1e-6, "max |pooled - brute force| over 100 matrices = " + num(worst)};
}

// 8. FLOP ratio equals sparsity exactly; sparse wall-clock at most half of dense.
Outcome cost_claim() {
  BenchOptions o;
  o.lengths = {4096};
  o.d = 64;
  o.variants = {PlanKind::full, PlanKind::guided};
  o.repeats = 5;
  o.seed = 80;
  const BenchReport rep = benchmark(o);
  const BenchRow* dense = rep.find(4096, "dense");
  const BenchRow* guided = rep.find(4096, "guided");
  if (!dense || !guided) return {false, "bench rows missing"};
  const SparsityPlan plan = bench_plan(PlanKind::guided, o);
  const bool exact = guided->score_flops * o.blocks * o.blocks == dense->score_flops * plan.kept_total();
  const double speed = guided->median_ms / dense->median_ms;
  return {exact && speed <= 0.5,
          std::string("flops ratio ") + (exact ? "==" : "!=") + " sparsity " + num(sparsity_ratio(plan)) +
              ", median " + num(guided->median_ms) + " ms vs dense " + num(dense->median_ms) +
              " ms (" + num(speed) + "x)"};
}

// 9. Mirror task: oracle plans learn the reflection, local-only plans cannot.
Outcome long_range() {
  ModelConfig cfg;
  cfg.d = 64;
  cfg.heads = 4;
  cfg.layers_enc = 2;
  cfg.layers_dec = 1;
  cfg.vocab = 16;
  cfg.map_vocab = 2;
  cfg.ff_width = 128;
  cfg.blocks = 16;
  cfg.k = 1;
  cfg.radius = 1;
  cfg.low = cfg.high = {8, 8};
  SyntheticTask task{TaskKind::mirror, {8, 8}, cfg.vocab, cfg.map_vocab, 90};
  AblationBudget b;
  b.train.steps = 5000;
  b.train.batch = 1;
  b.train.lr = 0.05;
  b.train.optimizer = OptimizerKind::sgd;
  b.train.clip = 1.0;
  b.seeds = {1, 2, 3};
  b.eval_instances = 200;
  const auto rep = run_ablation({"oracle", "local"}, task, cfg, b);
  const auto* oracle = rep.find("oracle");
  const auto* local = rep.find("local");
  std::size_t wins = 0;
  std::string detail;
  for (std::size_t s = 0; s < b.seeds.size(); ++s) {
    const bool ok = oracle->accuracy[s] >= 0.90 && local->accuracy[s] <= 0.50;
    wins += ok;
    detail += "seed " + std::to_string(b.seeds[s]) + ": oracle " + num(oracle->accuracy[s]) +
              " local " + num(local->accuracy[s]) + (ok ? " ok; " : " miss; ");
  }
  return {2 * wins > b.seeds.size(), detail + std::to_string(wins) + "/3 seeds"};
}

// 10. Default sampling protocol through the edit command.
Outcome sampling_protocol() {
  const fs::path dir = scratch("sampling");
  const RunConfig c = run_config_from_json(pipeline_json(dir / "out"));
  if (auto r = run_pipeline(c, {"train-guide", "train-sga", "edit"}); !r.pass) return r;
  const fs::path edit = dir / "out" / "edit";
  const auto cands = read_json(edit / "candidates.json");
  const auto report = read_json(edit / "report.json");
  const auto image = read_token_grid(edit / "input.json");
  const auto semantic = read_token_grid(edit / "semantic.json");
  const auto mask = read_mask_pgm(edit / "mask.pgm");
  const auto plans = model_plans_from_json(read_json(edit / "plans.json"));
  const auto w = load_checkpoint(dir / "out" / "train-sga" / "checkpoint");
  const std::size_t k = report["k"];
  bool ordered = true, preserved = true;
  double rescore = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double lp = cands[i]["logprob"];
    if (i > 0 && lp > cands[i - 1]["logprob"].get<double>()) ordered = false;
    const auto t = token_grid_from_json(cands[i]["tokens"]);
    for (std::size_t l = 0; l < t.size(); ++l) preserved = preserved && (mask[l] || t.tokens[l] == image.tokens[l]);
    rescore = std::max(rescore, std::abs(rescore_candidate(image, semantic, mask, t, w, &plans, k) - lp));
  }
  fs::remove_all(dir);
  const bool pass = cands.size() == 10 && k == 8 && report["n_samples"] == 50 && ordered && preserved &&
                    rescore <= 1e-5;
  return {pass, std::to_string(cands.size()) + " candidates, k=" + std::to_string(k) +
                    (ordered ? ", ordered" : ", NOT ordered") + (preserved ? ", unmasked kept" : ", unmasked CHANGED") +
                    ", max rescore diff " + num(rescore)};
}

// 11. Rollout rows are stochastic; SSIM of an image with itself is one.
Outcome rollout_ssim() {
  const fs::path dir = scratch("rollout");
  auto j = pipeline_json(dir / "out");
  j["rollout"] = {{"random_init", true}};
  j["model"]["layers_enc"] = 3;
  const RunConfig c = run_config_from_json(j);
  if (auto r = run_pipeline(c, {"rollout"}); !r.pass) return r;
  const auto rep = read_json(dir / "out" / "rollout" / "rollout.json");
  double worst = 0.0;
  for (const auto& row : rep["matrix"]) {
    double s = 0.0;
    for (double v : row) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  fs::remove_all(dir);
  Rng rng(110);
  double ssim_err = 0.0;
  for (std::size_t ch : {1, 3}) {
    ImageGrid a(24, 20, ch);
    for (auto& p : a.pixels) p = float(rng.uniform());
    ssim_err = std::max(ssim_err, std::abs(ssim(a, a) - 1.0));
  }
  return {worst <= 1e-5 && ssim_err <= 1e-6,
          "max |row sum - 1| = " + num(worst) + ", max |ssim(a,a) - 1| = " + num(ssim_err)};
}

// 12. Candidate files are byte-identical across runs and worker counts.
Outcome determinism() {
  const fs::path dir = scratch("determinism");
  RunConfig c = run_config_from_json(pipeline_json(dir / "out"));
  if (auto r = run_pipeline(c, {"fit-codebook", "train-guide", "train-sga"}); !r.pass) return r;
  c.edit.guide_checkpoint = (dir / "out" / "train-guide" / "checkpoint").string();
  c.edit.sga_checkpoint = (dir / "out" / "train-sga" / "checkpoint").string();
  c.edit.codebook = (dir / "out" / "fit-codebook" / "codebook.sgat").string();
  c.edit.projection = (dir / "out" / "fit-codebook" / "projection.sgat").string();
  std::vector<std::map<std::string, std::string>> runs;
  for (std::size_t workers : {1, 4, 4}) {
    RunConfig ci = c;
    ci.sampling.workers = workers;
    ci.out = (dir / ("w" + std::to_string(workers) + "_" + std::to_string(runs.size()))).string();
    if (auto r = run_pipeline(ci, {"edit"}); !r.pass) return r;
    std::map<std::string, std::string> files;
    const fs::path e = fs::path(ci.out) / "edit";
    for (const auto& f : fs::directory_iterator(e / "candidates")) files[f.path().filename()] = slurp(f.path());
    files["candidates.json"] = slurp(e / "candidates.json");
    runs.push_back(std::move(files));
  }
  fs::remove_all(dir);
  const bool same = runs[0] == runs[1] && runs[1] == runs[2];
  return {same && runs[0].size() > 10,
          std::to_string(runs[0].size()) + " files compared across workers 1/4/4: " +
              (same ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  app.add_option("--only", only, "run a single criterion (1-12)")->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"sparsity ratio", sparsity_ratio_claim},
      {"oracle equivalence", oracle_equivalence},
      {"degeneracy", degeneracy},
      {"causality", causality},
      {"leakage", leakage},
      {"gradient correctness", gradients},
      {"block pooling", block_pooling},
      {"cost claim", cost_claim},
      {"long-range advantage", long_range},
      {"sampling protocol", sampling_protocol},
      {"rollout and ssim", rollout_ssim},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && std::size_t(only) != i + 1) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %zu (%s): %s  %s  [%.1fs]\n", i + 1, criteria[i].first.c_str(),
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), s);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
