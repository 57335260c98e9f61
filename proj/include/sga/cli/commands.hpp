// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>

#include "sga/cli/run_config.hpp"
#include "sga/compositing/composite.hpp"
#include "sga/compositing/decode.hpp"
#include "sga/compositing/pyramid.hpp"
#include "sga/evalbench/ablation.hpp"
#include "sga/evalbench/bench.hpp"
#include "sga/evalbench/diversity.hpp"
#include "sga/evalbench/rollout.hpp"
#include "sga/model/checkpoint.hpp"
#include "sga/quantizer/leakage.hpp"
#include "sga/sampler/guide.hpp"

namespace sga {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitInvariant = 4;

/// Command-line overrides applied on top of the config file.
struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> steps;
};

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"fit-codebook", "train-guide", "train-sga", "edit",
                                              "ablate",       "rollout",     "leakcheck", "bench"};
  return names;
}

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const ParameterError*>(&e) || dynamic_cast<const InsufficientDataError*>(&e)) {
    return kExitConfig;
  }
  return kExitInvariant;
}

namespace detail {

/// Outputs are written to a hidden sibling directory and moved to
/// <out>/<command> only when the command succeeds.
class Staging {
 public:
  Staging(const std::filesystem::path& out, const std::string& command)
      : out_(out), final_(out / command), dir_(out / ("." + command + ".staging")) {
    created_out_ = !std::filesystem::exists(out_);
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;

  ~Staging() {
    if (committed_) return;
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
    if (created_out_ && std::filesystem::is_empty(out_, ec)) std::filesystem::remove(out_, ec);
  }

  const std::filesystem::path& dir() const { return dir_; }
  const std::filesystem::path& final_dir() const { return final_; }

  void commit() {
    std::filesystem::remove_all(final_);
    std::filesystem::rename(dir_, final_);
    committed_ = true;
  }

 private:
  std::filesystem::path out_, final_, dir_;
  bool created_out_ = false;
  bool committed_ = false;
};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  write_text(p, j.dump(2) + "\n");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

/// Blocky image: every patch gets a random palette colour plus faint
/// per-pixel noise, so patch features are distinct.
inline ImageGrid synthetic_image(GridDims tokens, std::size_t patch, std::size_t channels,
                                 std::size_t palette, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> colours(palette * channels);
  for (auto& c : colours) c = float(0.1 + 0.8 * rng.uniform());
  ImageGrid img(tokens.height * patch, tokens.width * patch, channels);
  for (std::size_t i = 0; i < tokens.height; ++i) {
    for (std::size_t j = 0; j < tokens.width; ++j) {
      const std::size_t p = rng.below(palette);
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          for (std::size_t c = 0; c < channels; ++c) {
            img.at(i * patch + y, j * patch + x, c) =
                colours[p * channels + c] + float(0.02 * (rng.uniform() - 0.5));
          }
        }
      }
    }
  }
  return img;
}

inline DenseArray stack_features(const std::vector<DenseArray>& grids) {
  std::size_t rows = 0, d = 0;
  for (const auto& g : grids) {
    rows += g.dim(0) * g.dim(1);
    d = g.dim(2);
  }
  DenseArray out({rows, d});
  std::size_t off = 0;
  for (const auto& g : grids) {
    std::copy(g.values().begin(), g.values().end(), out.data() + off);
    off += g.size();
  }
  return out;
}

inline std::filesystem::path or_default(const std::string& path, const std::filesystem::path& fallback) {
  return path.empty() ? fallback : std::filesystem::path(path);
}

inline bool is_json(const std::filesystem::path& p) { return p.extension() == ".json"; }

struct Log {
  std::ostream& os;
  template <class... A>
  void operator()(const A&... parts) const {
    (os << ... << parts) << '\n';
    os.flush();
  }
};

inline std::size_t progress_every(std::size_t steps) { return std::max<std::size_t>(1, steps / 10); }

// ---- commands ------------------------------------------------------------

inline int fit_codebook_cmd(const RunConfig& c, const std::filesystem::path& dir, const Log& log) {
  const auto& q = c.quantizer;
  std::vector<ImageGrid> images;
  if (q.images.empty()) {
    for (std::size_t i = 0; i < q.synthetic_images; ++i) {
      images.push_back(synthetic_image(q.synthetic_tokens, q.patch, q.channels,
                                       2 * c.codebook_size(), derive_seed(c.seed, "codebook-image", i)));
    }
  } else {
    for (const auto& p : q.images) images.push_back(read_pnm(p));
  }
  const DenseArray projection =
      random_projection(q.patch, q.channels, q.d, derive_seed(c.seed, "projection"));
  std::vector<DenseArray> feats;
  for (const auto& img : images) {
    if (img.channels != q.channels) throw ConfigError("fit-codebook: image channel count differs from quantizer.channels");
    feats.push_back(encode_patches(img, q.patch, projection));
  }
  const CodebookFit fit = fit_codebook_traced(stack_features(feats), c.codebook_size(),
                                              q.iterations, derive_seed(c.seed, "codebook"));
  save_codebook(dir / "codebook.sgat", fit.codebook);
  write_sgat(dir / "projection.sgat", projection);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "tokens_%02zu.json", i);
    write_token_grid(dir / name, quantize(feats[i], fit.codebook));
  }
  write_json(dir / "report.json", {{"codebook_size", fit.codebook.size()},
                                   {"d", fit.codebook.dim()},
                                   {"images", images.size()},
                                   {"energy", fit.energy}});
  log("fit-codebook: |Z|=", fit.codebook.size(), " d=", fit.codebook.dim(), " final energy ",
      fit.energy.empty() ? 0.0 : fit.energy.back());
  return kExitOk;
}

inline std::string loss_csv(const std::vector<double>& losses) {
  std::string s = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) s += std::to_string(i) + "," + fmt(losses[i]) + "\n";
  return s;
}

inline int train_guide_cmd(const RunConfig& c, const std::filesystem::path& dir, const Log& log) {
  const SyntheticTask task = c.task_at(c.model.low);
  auto init = init_weights<float>(c.model, c.model.low, derive_seed(c.seed, "init-guide"));
  const TrainOptions opts = c.train_options();
  const std::size_t every = progress_every(opts.steps);
  const auto res = train(std::move(init), task_source(task), opts, {}, [&](std::size_t s, double l) {
    if ((s + 1) % every == 0) log("train-guide: step ", s + 1, "/", opts.steps, " loss ", fmt(l));
  });
  save_checkpoint(dir / "checkpoint", res.weights);
  write_text(dir / "losses.csv", loss_csv(res.losses));
  write_json(dir / "report.json", {{"grid", grid_to_json(c.model.low)},
                                   {"steps", opts.steps},
                                   {"initial_loss", res.losses.front()},
                                   {"final_loss", res.losses.back()}});
  return kExitOk;
}

/// Guided plans for one training example: the guide runs densely on the
/// subsampled example and its maps are pooled into plans.
inline PlanProvider guided_plan_provider(const ModelWeights<float>& guide, std::size_t factor,
                                         const ModelConfig& cfg) {
  auto geo = std::make_shared<ModelGeometry>(make_geometry(guide.config, guide.grid));
  return [&guide, factor, cfg, geo](const TrainExample& ex) -> std::optional<ModelPlans> {
    const TokenGrid target = subsample_tokens(ex.target, factor);
    const TokenGrid semantic = subsample_tokens(ex.semantic, factor);
    const MaskMap mask = downsample_mask_any(ex.mask, factor);
    const auto maps = guiding_forward(apply_mask(target, mask), semantic,
                                      decoder_inputs(target, guide.config), guide);
    return plans_from_maps(maps.enc_maps, maps.dec_self_maps, maps.dec_cross_maps, *geo->part,
                           *geo->part, cfg.k, cfg.radius);
  };
}

inline int train_sga_cmd(const RunConfig& c, const std::filesystem::path& dir, const Log& log) {
  const auto guide_path = or_default(c.edit.guide_checkpoint, c.out_dir() / "train-guide" / "checkpoint");
  const ModelWeights<float> guide = load_checkpoint(guide_path);
  if (!(guide.grid == c.model.low) || guide.config.blocks != c.model.blocks) {
    throw ConfigError("train-sga: guide checkpoint grid/blocks do not match model.low/model.blocks");
  }
  ModelWeights<float> w = init_from_guiding(guide, guide.grid, &c.model);
  const std::size_t steps = c.sga.steps ? c.sga.steps : c.train.steps;
  nlohmann::json events = nlohmann::json::array();
  std::string csv = "stage,step,loss\n";
  const auto ladder = c.ladder();
  for (std::size_t s = 0; s < ladder.size(); ++s) {
    const GridDims g = ladder[s];
    log("train-sga: stage ", s, " positional interpolation ", w.grid.height, "x", w.grid.width,
        " -> ", g.height, "x", g.width);
    events.push_back({{"stage", s},
                      {"event", "positional-interpolation"},
                      {"from", grid_to_json(w.grid)},
                      {"to", grid_to_json(g)}});
    w = init_from_guiding(w, g, &c.model);
    const std::size_t factor = g.height / guide.grid.height;
    PlanProvider plans;
    if (factor > 1) plans = guided_plan_provider(guide, factor, c.model);
    TrainOptions opts = c.train_options();
    opts.steps = steps;
    opts.seed = derive_seed(c.seed, "sga-stage", s);
    const std::size_t every = progress_every(steps);
    auto res = train(std::move(w), task_source(c.task_at(g)), opts, plans, [&](std::size_t i, double l) {
      if ((i + 1) % every == 0) log("train-sga: stage ", s, " step ", i + 1, "/", steps, " loss ", fmt(l));
    });
    for (std::size_t i = 0; i < res.losses.size(); ++i) {
      csv += std::to_string(s) + "," + std::to_string(i) + "," + fmt(res.losses[i]) + "\n";
    }
    events.push_back({{"stage", s},
                      {"event", "stage-complete"},
                      {"grid", grid_to_json(g)},
                      {"guided", factor > 1},
                      {"final_loss", res.losses.back()}});
    w = std::move(res.weights);
  }
  save_checkpoint(dir / "checkpoint", w);
  write_text(dir / "losses.csv", csv);
  write_json(dir / "report.json", {{"events", events}, {"steps_per_stage", steps}});
  return kExitOk;
}

struct EditInputs {
  TokenGrid image;
  TokenGrid semantic;
  MaskMap mask;
  std::optional<ImageGrid> pixels;  // when the input was an image file
};

inline EditInputs load_edit_inputs(const RunConfig& c, const ModelWeights<float>& sga,
                                   const Codebook* codebook, const DenseArray* projection) {
  EditInputs in;
  const auto& e = c.edit;
  const SyntheticTask task = c.task_at(sga.grid);
  std::optional<TaskSample> synthetic;
  if (e.image.empty()) {
    Rng rng(derive_seed(c.seed, "edit-input"));
    synthetic = generate_sample(task, rng);
    in.image = synthetic->image;
  } else if (is_json(e.image)) {
    in.image = read_token_grid(e.image);
  } else {
    if (!codebook) throw ConfigError("edit: image files need edit.codebook and edit.projection");
    in.pixels = read_pnm(e.image);
    in.image = quantize(encode_patches(*in.pixels, c.quantizer.patch, *projection), *codebook);
  }
  if (!e.semantic.empty()) {
    in.semantic = read_token_grid(e.semantic);
  } else if (synthetic) {
    in.semantic = synthetic->semantic;
  } else {
    in.semantic = TokenGrid(in.image.height, in.image.width, c.model.map_vocab, 0);
  }
  if (!e.mask.empty()) {
    in.mask = read_mask_pgm(e.mask);
    if (in.mask.height != in.image.height) in.mask = downsample_mask_any(in.mask, c.quantizer.patch);
  } else if (synthetic) {
    in.mask = free_form_mask_within(synthetic->maskable, derive_seed(c.seed, "mask"));
  } else {
    in.mask = free_form_mask(in.image.dims(), derive_seed(c.seed, "mask"));
  }
  if (!(in.image.dims() == sga.grid) || !(in.semantic.dims() == sga.grid) ||
      in.mask.height != sga.grid.height || in.mask.width != sga.grid.width) {
    throw ShapeError("edit: inputs must be " + std::to_string(sga.grid.height) + "x" +
                     std::to_string(sga.grid.width) + " tokens to match the SGA checkpoint");
  }
  if (in.image.vocab != sga.config.vocab) throw ConfigError("edit: image vocabulary differs from the model");
  return in;
}

inline int edit_cmd(const RunConfig& c, const std::filesystem::path& dir, const Log& log) {
  const auto& e = c.edit;
  const ModelWeights<float> guide =
      load_checkpoint(or_default(e.guide_checkpoint, c.out_dir() / "train-guide" / "checkpoint"));
  const ModelWeights<float> sga =
      load_checkpoint(or_default(e.sga_checkpoint, c.out_dir() / "train-sga" / "checkpoint"));
  if (sga.grid.height % guide.grid.height || sga.grid.width % guide.grid.width ||
      sga.grid.height / guide.grid.height != sga.grid.width / guide.grid.width) {
    throw ConfigError("edit: SGA grid is not an integer scaling of the guide grid");
  }
  std::optional<Codebook> codebook;
  std::optional<DenseArray> projection;
  if (!e.codebook.empty()) {
    if (e.projection.empty()) throw ConfigError("edit: edit.codebook needs edit.projection");
    codebook = load_codebook(e.codebook);
    projection = read_sgat(e.projection);
  }
  const EditInputs in = load_edit_inputs(c, sga, codebook ? &*codebook : nullptr,
                                         projection ? &*projection : nullptr);
  const std::size_t factor = sga.grid.height / guide.grid.height;

  SamplingOptions opts = c.sampling;
  opts.seed = c.seed;
  opts.k = std::min(opts.k, sga.config.vocab);

  const auto t0 = std::chrono::steady_clock::now();
  std::optional<GuideResult> guided;
  if (in.mask.any()) {
    guided = guide_and_plan(subsample_tokens(in.image, factor), subsample_tokens(in.semantic, factor),
                            downsample_mask_any(in.mask, factor), guide, sga.config, opts);
  }
  const auto t1 = std::chrono::steady_clock::now();
  const CandidateSet set =
      autoregressive_edit(in.image, in.semantic, in.mask, sga, guided ? &guided->plans : nullptr, opts);
  const auto t2 = std::chrono::steady_clock::now();
  const double guide_s = std::chrono::duration<double>(t1 - t0).count();
  const double sga_s = std::chrono::duration<double>(t2 - t1).count();

  std::filesystem::create_directories(dir / "candidates");
  write_token_grid(dir / "input.json", in.image);
  write_token_grid(dir / "semantic.json", in.semantic);
  write_mask_pgm(dir / "mask.pgm", in.mask);
  std::optional<DenseArray> inverse;
  if (codebook) inverse = projection_pseudo_inverse(*projection);
  const std::size_t ch = projection ? projection->rows() / (c.quantizer.patch * c.quantizer.patch) : 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "candidate_%02zu", i);
    write_token_grid(dir / "candidates" / (std::string(stem) + ".json"), set[i].tokens);
    if (!codebook) continue;
    const std::string ext = ch == 1 ? ".pgm" : ".ppm";
    const ImageGrid decoded = tokens_to_image(set[i].tokens, *codebook, *inverse, c.quantizer.patch, ch);
    write_pnm(dir / "candidates" / (std::string(stem) + ext), decoded);
    if (!in.pixels || ch != in.pixels->channels || ch > 3 || ch == 2) continue;
    const MaskMap pm = upsample_mask(in.mask, c.quantizer.patch);
    write_pnm(dir / "candidates" / (std::string(stem) + "_composite" + ext), composite(*in.pixels, decoded, pm));
    std::size_t levels = e.blend_levels;
    while (levels > 0 && (decoded.height % (std::size_t{1} << levels) || decoded.width % (std::size_t{1} << levels))) --levels;
    if (levels > 0) {
      const ImageGrid blended = laplacian_blend(decoded, *in.pixels, mask_weights(pm), levels);
      write_pnm(dir / "candidates" / (std::string(stem) + "_blend" + ext),
                composite(*in.pixels, blended, pm));
    }
  }
  write_json(dir / "candidates.json", candidates_to_json(set));
  nlohmann::json report = {
      {"candidates", set.size()},
      {"n_samples", opts.n_samples},
      {"n_keep", opts.n_keep},
      {"k", opts.k},
      {"temperature", opts.temperature},
      {"masked_tokens", in.mask.count()},
      {"logprobs", nlohmann::json::array()},
      {"hamming_diversity", hamming_diversity(set, in.mask)},
      {"timing", {{"guide_seconds", guide_s},
                  {"sga_seconds", sga_s},
                  {"guide_share", guide_s + sga_s > 0 ? guide_s / (guide_s + sga_s) : 0.0}}},
  };
  for (const auto& cand : set.items) report["logprobs"].push_back(cand.logprob);
  if (guided) {
    report["sparsity"] = {{"mean", guided->plans.mean_sparsity()}};
    write_json(dir / "plans.json", model_plans_to_json(guided->plans));
  }
  write_json(dir / "report.json", report);
  log("edit: ", set.size(), " candidates, masked tokens ", in.mask.count(), ", guide share ",
      fmt(guide_s / std::max(1e-12, guide_s + sga_s)));
  return kExitOk;
}

inline int ablate_cmd(const RunConfig& c, const std::filesystem::path& dir, const Log& log) {
  const auto& a = c.ablation;
  AblationBudget budget;
  budget.train = c.train_options();
  budget.train.steps = a.steps;
  budget.train.batch = a.batch;
  budget.train.lr = a.lr;
  budget.train.optimizer = a.optimizer;
  budget.seeds = a.seeds;
  budget.eval_instances = a.eval_instances;
  budget.window = a.window;
  budget.guide_instances = a.guide_instances;
  std::string csv = "variant,seed,step,loss\n";
  const std::size_t every = progress_every(a.steps);
  const auto report = run_ablation(a.variants, c.task_at(c.model.low), c.model, budget,
                                   [&](const std::string& v, std::uint64_t seed, std::size_t s, double l) {
                                     csv += v + "," + std::to_string(seed) + "," + std::to_string(s) + "," + fmt(l) + "\n";
                                     if ((s + 1) % every == 0) log("ablate: ", v, " seed ", seed, " step ", s + 1, " loss ", fmt(l));
                                   });
  write_text(dir / "losses.csv", csv);
  write_json(dir / "ablation.json", ablation_to_json(report));
  write_text(dir / "ablation.txt", ablation_to_text(report));
  log(ablation_to_text(report));
  return kExitOk;
}

inline int rollout_cmd(const RunConfig& c, const std::filesystem::path& dir, const Log& log) {
  const ModelWeights<float> w =
      c.rollout.random_init
          ? init_weights<float>(c.model, c.model.low, derive_seed(c.seed, "rollout-init"))
          : load_checkpoint(or_default(c.rollout.checkpoint, c.out_dir() / "train-guide" / "checkpoint"));
  Rng rng(derive_seed(c.seed, "rollout"));
  const TrainExample ex = sample_example(c.task_at(w.grid), rng);
  const auto maps = guiding_forward(apply_mask(ex.target, ex.mask), ex.semantic,
                                    decoder_inputs(ex.target, w.config), w);
  std::vector<DenseArray> layers;
  for (const auto& heads : maps.enc_maps) layers.push_back(head_average(heads));
  const DenseArray r = attention_rollout(layers);
  double worst = 0.0;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < r.rows(); ++i) {
    double s = 0.0;
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < r.cols(); ++j) {
      s += r(i, j);
      row.push_back(r(i, j));
    }
    worst = std::max(worst, std::abs(s - 1.0));
    rows.push_back(std::move(row));
  }
  if (worst > 1e-5) throw ValidationError("rollout: row sums deviate from 1 by " + fmt(worst));
  std::ostringstream txt;
  txt << "rollout over " << layers.size() << " encoder layers, grid " << w.grid.height << "x"
      << w.grid.width << ", max |row sum - 1| = " << fmt(worst) << "\n";
  for (std::size_t q = 0; q < ex.mask.bits.size(); ++q) {
    if (!ex.mask[q]) continue;
    std::vector<std::size_t> idx(r.cols());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + std::min<std::size_t>(5, idx.size()), idx.end(),
                      [&](std::size_t a, std::size_t b) { return r(q, a) != r(q, b) ? r(q, a) > r(q, b) : a < b; });
    txt << "query (" << q / w.grid.width << "," << q % w.grid.width << ") top sources:";
    for (std::size_t t = 0; t < std::min<std::size_t>(5, idx.size()); ++t) {
      txt << " (" << idx[t] / w.grid.width << "," << idx[t] % w.grid.width << ")=" << fmt(r(q, idx[t]));
    }
    txt << "\n";
    break;
  }
  write_json(dir / "rollout.json", {{"grid", grid_to_json(w.grid)},
                                    {"layers", layers.size()},
                                    {"max_row_error", worst},
                                    {"matrix", rows}});
  write_text(dir / "rollout.txt", txt.str());
  log(txt.str());
  return kExitOk;
}

inline int leakcheck_cmd(const RunConfig& c, const std::filesystem::path& dir, const Log& log) {
  const auto& l = c.leakcheck;
  const auto& q = c.quantizer;
  const ImageGrid image = l.image.empty()
                              ? synthetic_image(l.tokens, q.patch, q.channels, 2 * c.codebook_size(),
                                                derive_seed(c.seed, "leak-image"))
                              : read_pnm(l.image);
  const std::size_t patch = q.patch;
  if (image.height % patch || image.width % patch) throw ShapeError("leakcheck: patch does not divide the image");
  const GridDims tok{image.height / patch, image.width / patch};
  const MaskMap mask = l.mask.empty() ? free_form_mask(tok, derive_seed(c.seed, "mask")) : read_mask_pgm(l.mask);
  const DenseArray projection = l.projection.empty()
                                    ? random_projection(patch, image.channels, q.d, derive_seed(c.seed, "projection"))
                                    : read_sgat(l.projection);
  const Codebook codebook =
      l.codebook.empty()
          ? fit_codebook(flatten_features(encode_patches(image, patch, projection)), c.codebook_size(),
                         q.iterations, derive_seed(c.seed, "codebook"))
          : load_codebook(l.codebook);
  const LeakageReport rep = leakage_report(image, mask, codebook, projection, patch, l.trials,
                                           derive_seed(c.seed, "leak-noise"));
  const std::string line = std::to_string(rep.changed_positions.size()) + " leaked tokens over " +
                           std::to_string(rep.trials) + " trials (" +
                           std::to_string(mask.count()) + " masked of " +
                           std::to_string(mask.bits.size()) + ")";
  write_json(dir / "report.json", {{"trials", rep.trials},
                                   {"leaked_tokens", rep.changed_positions.size()},
                                   {"changed_positions", rep.changed_positions},
                                   {"changed_events", rep.changed_events},
                                   {"masked_tokens", mask.count()}});
  write_text(dir / "report.txt", line + "\n");
  log("leakcheck: ", line);
  return rep.clean() ? kExitOk : kExitInvariant;
}

inline PlanKind bench_kind(const std::string& v) {
  return v == "dense" ? PlanKind::full : plan_kind_from_string(v);
}

inline int bench_cmd(const RunConfig& c, const std::filesystem::path& dir, const Log& log) {
  const auto& b = c.bench;
  BenchOptions o;
  o.lengths = b.lengths;
  o.d = b.d;
  o.variants.clear();
  for (const auto& v : b.variants) o.variants.push_back(bench_kind(v));
  if (std::find(o.variants.begin(), o.variants.end(), PlanKind::full) == o.variants.end()) {
    o.variants.insert(o.variants.begin(), PlanKind::full);
  }
  o.repeats = b.repeats;
  o.blocks = b.blocks;
  o.radius = b.radius;
  o.k = b.k;
  o.window = b.window;
  o.seed = c.seed;
  const BenchReport rep = benchmark(o);
  write_json(dir / "bench.json", bench_to_json(rep));
  write_text(dir / "bench.txt", bench_to_text(rep));
  log(bench_to_text(rep));
  return kExitOk;
}

}  // namespace detail

/// Applies overrides, validates, and returns the config a command runs with.
inline RunConfig resolve_config(const CommandOptions& opts) {
  RunConfig c = load_run_config(opts.config);
  if (opts.seed) c.seed = *opts.seed;
  if (opts.out) c.out = *opts.out;
  if (opts.workers) c.sampling.workers = *opts.workers;
  if (opts.steps) {
    c.train.steps = *opts.steps;
    c.sga.steps = *opts.steps;
    c.ablation.steps = *opts.steps;
  }
  c.validate();
  return c;
}

/// Runs one command; returns its exit code and reports errors on `err`.
/// Outputs land in <out>/<command>/ only on success.
inline int run_command(const std::string& name, const RunConfig& c, std::ostream& err = std::cerr) {
  const detail::Log log{err};
  using Fn = int (*)(const RunConfig&, const std::filesystem::path&, const detail::Log&);
  static const std::map<std::string, Fn> table{
      {"fit-codebook", detail::fit_codebook_cmd}, {"train-guide", detail::train_guide_cmd},
      {"train-sga", detail::train_sga_cmd},       {"edit", detail::edit_cmd},
      {"ablate", detail::ablate_cmd},             {"rollout", detail::rollout_cmd},
      {"leakcheck", detail::leakcheck_cmd},       {"bench", detail::bench_cmd}};
  const auto it = table.find(name);
  if (it == table.end()) {
    err << "error: unknown command '" << name << "'\n";
    return kExitConfig;
  }
  try {
    detail::Staging stage(c.out_dir(), name);
    detail::write_json(stage.dir() / "resolved_config.json", run_config_to_json(c));
    const int code = it->second(c, stage.dir(), log);
    stage.commit();
    return code;
  } catch (const std::exception& e) {
    err << "error: " << name << ": " << e.what() << '\n';
    return exit_code_for(e);
  }
}

inline int run_command(const std::string& name, const CommandOptions& opts,
                       std::ostream& err = std::cerr) {
  RunConfig c;
  try {
    c = resolve_config(opts);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return run_command(name, c, err);
}

}  // namespace sga
