// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "sga/evalbench/train.hpp"
#include "sga/sampler/edit.hpp"
#include "sga/sparse/plan.hpp"

namespace sga {

struct QuantizerSection {
  std::size_t patch = 16;
  std::size_t channels = 3;
  std::size_t d = 32;
  std::size_t codebook_size = 0;  // 0 means model.vocab
  std::size_t iterations = 50;
  std::vector<std::string> images;  // empty: synthetic images
  std::size_t synthetic_images = 4;
  GridDims synthetic_tokens{16, 16};
};

struct TaskSection {
  TaskKind kind = TaskKind::mirror;
  std::size_t map_vocab = 2;
};

struct TrainSection {
  std::size_t steps = 200;
  double lr = 0.05;
  std::size_t batch = 1;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double clip = 1.0;
};

struct SgaSection {
  std::vector<GridDims> ladder;  // empty: doubling from model.low to model.high
  std::size_t steps = 0;         // per stage; 0 means train.steps
};

struct EditSection {
  std::string image;     // token JSON or PPM/PGM; empty: synthetic task instance
  std::string semantic;  // token JSON; empty: all-zero map (or the synthetic one)
  std::string mask;      // PGM at token or pixel resolution; empty: free-form mask
  std::string guide_checkpoint;
  std::string sga_checkpoint;
  std::string codebook;    // optional, enables image reconstruction
  std::string projection;  // required with codebook
  std::size_t blend_levels = 4;
};

struct AblationSection {
  std::vector<std::string> variants{"dense", "guided", "oracle", "local", "sliding", "random", "global"};
  std::size_t steps = 300;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t eval_instances = 200;
  std::size_t window = 3;
  std::size_t guide_instances = 32;
  std::size_t batch = 1;
  double lr = 0.05;
  OptimizerKind optimizer = OptimizerKind::sgd;
};

struct BenchSection {
  std::vector<std::size_t> lengths{1024, 4096};
  std::size_t d = 64;
  std::vector<std::string> variants{"dense", "guided", "local", "sliding", "random", "global"};
  std::size_t repeats = 5;
  std::size_t blocks = 64;
  std::size_t radius = 1;
  std::size_t k = 3;
  std::size_t window = 3;
};

struct RolloutSection {
  std::string checkpoint;  // empty: <out>/train-guide/checkpoint
  bool random_init = false;
};

struct LeakSection {
  std::string image;  // empty: synthetic image
  std::string mask;   // token-level PGM; empty: free-form mask
  std::string codebook;
  std::string projection;
  std::size_t trials = 100;
  GridDims tokens{16, 16};  // synthetic image size in tokens
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  ModelConfig model;
  TaskSection task;
  QuantizerSection quantizer;
  TrainSection train;
  SgaSection sga;
  SamplingOptions sampling;
  EditSection edit;
  AblationSection ablation;
  BenchSection bench;
  RolloutSection rollout;
  LeakSection leakcheck;

  std::filesystem::path out_dir() const { return out; }
  std::size_t codebook_size() const {
    return quantizer.codebook_size ? quantizer.codebook_size : model.vocab;
  }
  SyntheticTask task_at(GridDims grid) const {
    SyntheticTask t;
    t.kind = task.kind;
    t.grid = grid;
    t.vocab = model.vocab;
    t.map_vocab = task.map_vocab;
    t.seed = seed;
    return t;
  }
  std::vector<GridDims> ladder() const {
    if (!sga.ladder.empty()) return sga.ladder;
    std::vector<GridDims> out;
    GridDims g = model.low;
    while (g.height < model.high.height && g.width < model.high.width) {
      g = {g.height * 2, g.width * 2};
      out.push_back(g);
    }
    if (out.empty() || !(out.back() == model.high)) out = {model.high};
    return out;
  }
  TrainOptions train_options() const {
    TrainOptions o;
    o.steps = train.steps;
    o.lr = train.lr;
    o.batch = train.batch;
    o.optimizer = train.optimizer;
    o.clip = train.clip;
    o.seed = seed;
    return o;
  }

  void validate() const;
};

namespace detail {

/// Reads keys from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& target) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  template <class F>
  void get_with(const char* key, F&& convert) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      convert(j_.at(key));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  const nlohmann::json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, v] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path(key) + "'");
    }
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

inline GridDims grid_value(const nlohmann::json& j) {
  if (!j.is_object() || j.size() != 2 || !j.contains("h") || !j.contains("w")) {
    throw ConfigError("grid must be {\"h\": H, \"w\": W}");
  }
  return grid_from_json(j);
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::Section top(j, "");
  top.get("seed", c.seed);
  top.get("out", c.out);
  if (auto* m = top.sub("model")) c.model = model_config_from_json(*m);

  if (auto* t = top.sub("task")) {
    detail::Section s(*t, "task");
    s.get_with("kind", [&](const nlohmann::json& v) { c.task.kind = task_kind_from_string(v.get<std::string>()); });
    s.get("map_vocab", c.task.map_vocab);
    s.finish();
  }
  if (auto* t = top.sub("quantizer")) {
    detail::Section s(*t, "quantizer");
    auto& q = c.quantizer;
    s.get("patch", q.patch);
    s.get("channels", q.channels);
    s.get("d", q.d);
    s.get("codebook_size", q.codebook_size);
    s.get("iterations", q.iterations);
    s.get("images", q.images);
    s.get("synthetic_images", q.synthetic_images);
    s.get_with("synthetic_tokens", [&](const nlohmann::json& v) { q.synthetic_tokens = detail::grid_value(v); });
    s.finish();
  }
  if (auto* t = top.sub("train")) {
    detail::Section s(*t, "train");
    s.get("steps", c.train.steps);
    s.get("lr", c.train.lr);
    s.get("batch", c.train.batch);
    s.get_with("optimizer", [&](const nlohmann::json& v) { c.train.optimizer = optimizer_from_string(v.get<std::string>()); });
    s.get("clip", c.train.clip);
    s.finish();
  }
  if (auto* t = top.sub("sga")) {
    detail::Section s(*t, "sga");
    s.get_with("ladder", [&](const nlohmann::json& v) {
      c.sga.ladder.clear();
      for (const auto& g : v) c.sga.ladder.push_back(detail::grid_value(g));
    });
    s.get("steps", c.sga.steps);
    s.finish();
  }
  if (auto* t = top.sub("sampling")) {
    detail::Section s(*t, "sampling");
    s.get("k", c.sampling.k);
    s.get("n_samples", c.sampling.n_samples);
    s.get("n_keep", c.sampling.n_keep);
    s.get("temperature", c.sampling.temperature);
    s.get("workers", c.sampling.workers);
    s.finish();
  }
  if (auto* t = top.sub("edit")) {
    detail::Section s(*t, "edit");
    auto& e = c.edit;
    s.get("image", e.image);
    s.get("semantic", e.semantic);
    s.get("mask", e.mask);
    s.get("guide_checkpoint", e.guide_checkpoint);
    s.get("sga_checkpoint", e.sga_checkpoint);
    s.get("codebook", e.codebook);
    s.get("projection", e.projection);
    s.get("blend_levels", e.blend_levels);
    s.finish();
  }
  if (auto* t = top.sub("ablation")) {
    detail::Section s(*t, "ablation");
    auto& a = c.ablation;
    s.get("variants", a.variants);
    s.get("steps", a.steps);
    s.get("seeds", a.seeds);
    s.get("eval_instances", a.eval_instances);
    s.get("window", a.window);
    s.get("guide_instances", a.guide_instances);
    s.get("batch", a.batch);
    s.get("lr", a.lr);
    s.get_with("optimizer", [&](const nlohmann::json& v) { a.optimizer = optimizer_from_string(v.get<std::string>()); });
    s.finish();
  }
  if (auto* t = top.sub("bench")) {
    detail::Section s(*t, "bench");
    auto& b = c.bench;
    s.get("lengths", b.lengths);
    s.get("d", b.d);
    s.get("variants", b.variants);
    s.get("repeats", b.repeats);
    s.get("blocks", b.blocks);
    s.get("radius", b.radius);
    s.get("k", b.k);
    s.get("window", b.window);
    s.finish();
  }
  if (auto* t = top.sub("rollout")) {
    detail::Section s(*t, "rollout");
    s.get("checkpoint", c.rollout.checkpoint);
    s.get("random_init", c.rollout.random_init);
    s.finish();
  }
  if (auto* t = top.sub("leakcheck")) {
    detail::Section s(*t, "leakcheck");
    auto& l = c.leakcheck;
    s.get("image", l.image);
    s.get("mask", l.mask);
    s.get("codebook", l.codebook);
    s.get("projection", l.projection);
    s.get("trials", l.trials);
    s.get_with("tokens", [&](const nlohmann::json& v) { l.tokens = detail::grid_value(v); });
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

inline void RunConfig::validate() const {
  model.validate();
  task_at(model.low).validate();
  if (task.map_vocab > model.map_vocab) {
    throw ConfigError("task.map_vocab exceeds model.map_vocab");
  }
  if (quantizer.patch == 0 || quantizer.d == 0 || quantizer.channels == 0) {
    throw ConfigError("quantizer: patch, d and channels must be positive");
  }
  if (train.steps == 0 || train.batch == 0) throw ConfigError("train: steps and batch must be >= 1");
  if (!(train.lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
  for (const auto& g : ladder()) {
    if (g.height % model.low.height || g.width % model.low.width ||
        g.height / model.low.height != g.width / model.low.width) {
      throw ConfigError("sga.ladder: stage " + std::to_string(g.height) + "x" +
                        std::to_string(g.width) + " is not an integer scaling of model.low");
    }
    if (g.size() % model.blocks) throw ConfigError("sga.ladder: N must divide every stage length");
  }
  if (sampling.n_samples == 0 || sampling.n_keep == 0 || sampling.k == 0) {
    throw ConfigError("sampling: k, n_samples and n_keep must be >= 1");
  }
  if (!(sampling.temperature > 0.0)) throw ConfigError("sampling: temperature must be positive");
  if (ablation.seeds.empty() || ablation.steps == 0) {
    throw ConfigError("ablation: needs at least one seed and one step");
  }
  for (const auto& v : ablation.variants) {
    if (v != "dense" && v != "full") plan_kind_from_string(v);
  }
  if (bench.repeats < 5) throw ConfigError("bench: repeats must be >= 5");
  for (const auto& v : bench.variants) {
    if (v != "dense" && v != "full") plan_kind_from_string(v);
  }
  if (leakcheck.trials == 0) throw ConfigError("leakcheck: trials must be >= 1");
}

/// Every field, defaults included; loading it back gives the same config.
inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json ladder = nlohmann::json::array();
  for (const auto& g : c.ladder()) ladder.push_back(grid_to_json(g));
  return {
      {"seed", c.seed},
      {"out", c.out},
      {"model", model_config_to_json(c.model)},
      {"task", {{"kind", to_string(c.task.kind)}, {"map_vocab", c.task.map_vocab}}},
      {"quantizer",
       {{"patch", c.quantizer.patch},
        {"channels", c.quantizer.channels},
        {"d", c.quantizer.d},
        {"codebook_size", c.codebook_size()},
        {"iterations", c.quantizer.iterations},
        {"images", c.quantizer.images},
        {"synthetic_images", c.quantizer.synthetic_images},
        {"synthetic_tokens", grid_to_json(c.quantizer.synthetic_tokens)}}},
      {"train",
       {{"steps", c.train.steps},
        {"lr", c.train.lr},
        {"batch", c.train.batch},
        {"optimizer", to_string(c.train.optimizer)},
        {"clip", c.train.clip}}},
      {"sga", {{"ladder", ladder}, {"steps", c.sga.steps ? c.sga.steps : c.train.steps}}},
      {"sampling",
       {{"k", c.sampling.k},
        {"n_samples", c.sampling.n_samples},
        {"n_keep", c.sampling.n_keep},
        {"temperature", c.sampling.temperature},
        {"workers", c.sampling.workers}}},
      {"edit",
       {{"image", c.edit.image},
        {"semantic", c.edit.semantic},
        {"mask", c.edit.mask},
        {"guide_checkpoint", c.edit.guide_checkpoint},
        {"sga_checkpoint", c.edit.sga_checkpoint},
        {"codebook", c.edit.codebook},
        {"projection", c.edit.projection},
        {"blend_levels", c.edit.blend_levels}}},
      {"ablation",
       {{"variants", c.ablation.variants},
        {"steps", c.ablation.steps},
        {"seeds", c.ablation.seeds},
        {"eval_instances", c.ablation.eval_instances},
        {"window", c.ablation.window},
        {"guide_instances", c.ablation.guide_instances},
        {"batch", c.ablation.batch},
        {"lr", c.ablation.lr},
        {"optimizer", to_string(c.ablation.optimizer)}}},
      {"bench",
       {{"lengths", c.bench.lengths},
        {"d", c.bench.d},
        {"variants", c.bench.variants},
        {"repeats", c.bench.repeats},
        {"blocks", c.bench.blocks},
        {"radius", c.bench.radius},
        {"k", c.bench.k},
        {"window", c.bench.window}}},
      {"rollout", {{"checkpoint", c.rollout.checkpoint}, {"random_init", c.rollout.random_init}}},
      {"leakcheck",
       {{"image", c.leakcheck.image},
        {"mask", c.leakcheck.mask},
        {"codebook", c.leakcheck.codebook},
        {"projection", c.leakcheck.projection},
        {"trials", c.leakcheck.trials},
        {"tokens", grid_to_json(c.leakcheck.tokens)}}},
  };
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace sga
