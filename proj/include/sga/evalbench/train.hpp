// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sga/evalbench/tasks.hpp"
#include "sga/model/transformer.hpp"

namespace sga {

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

struct TrainOptions {
  std::size_t steps = 100;
  double lr = 0.05;
  std::size_t batch = 1;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double clip = 1.0;  // global gradient-norm clip; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
};

using ExampleSource = std::function<TrainExample(Rng&)>;
/// Plans to use for one example; an empty optional means dense attention.
using PlanProvider = std::function<std::optional<ModelPlans>(const TrainExample&)>;

struct TrainResult {
  ModelWeights<float> weights;
  std::vector<double> losses;  // one mean loss per step
};

/// Adds the masked-position cross-entropy of one example to the graph.
template <std::floating_point T>
typename GradTape<T>::Var example_loss(GradTape<T>& tape, TransformerGraph<T>& graph,
                                       const TrainExample& ex, const ModelConfig& cfg) {
  const TokenGrid x = apply_mask(ex.target, ex.mask);
  auto memory = graph.encode(graph.embed(x, ex.semantic));
  auto logits = graph.decode(decoder_inputs(ex.target, cfg), memory);
  std::vector<std::size_t> rows, targets;
  for (std::size_t i = 0; i < ex.mask.bits.size(); ++i) {
    if (!ex.mask[i]) continue;
    rows.push_back(i);
    targets.push_back(static_cast<std::size_t>(ex.target.tokens[i]));
  }
  if (rows.empty()) throw ValidationError("example_loss: mask selects no positions");
  return tape.cross_entropy(logits, std::move(rows), std::move(targets));
}

/// Mean masked cross-entropy of one example (no gradient).
template <std::floating_point T>
double training_loss(const ModelWeights<T>& w, const TrainExample& ex,
                     const ModelPlans* plans = nullptr) {
  GradTape<T> tape(false);
  const auto geo = make_geometry(w.config, w.grid);
  auto vars = bind_weights(tape, w, false);
  TransformerGraph<T> graph(tape, vars, w.config, geo, plans, false);
  return static_cast<double>(tape.value(example_loss(tape, graph, ex, w.config))[0]);
}

/// Gradient-descent trainer (plain SGD or Adam) with global-norm clipping.
/// Single-threaded; identical inputs give bit-identical loss curves.
class Trainer {
 public:
  Trainer(ModelWeights<float> init, TrainOptions opts)
      : w_(std::move(init)), opts_(opts), rng_(derive_seed(opts.seed, "train")) {
    if (opts_.batch == 0) throw ConfigError("train: batch must be >= 1");
    if (opts_.optimizer == OptimizerKind::adam) {
      m_ = w_.p;
      v_ = w_.p;
      zip_slots([](const std::string&, DenseArray& a, DenseArray& b) {
        a.fill(0.0f);
        b.fill(0.0f);
      }, m_, v_);
    }
  }

  const ModelWeights<float>& weights() const { return w_; }
  ModelWeights<float>& weights() { return w_; }
  std::size_t step_count() const { return step_; }

  /// One optimisation step over `batch` examples drawn from `source`.
  double step(const ExampleSource& source, const PlanProvider& plans) {
    using Var = GradTape<float>::Var;
    GradTape<float> tape(true);
    auto vars = bind_weights(tape, w_, true);
    const auto geo = make_geometry(w_.config, w_.grid);
    Var total{};
    std::vector<std::optional<ModelPlans>> held(opts_.batch);
    for (std::size_t b = 0; b < opts_.batch; ++b) {
      TrainExample ex = source(rng_);
      if (plans) held[b] = plans(ex);
      TransformerGraph<float> graph(tape, vars, w_.config, geo, held[b] ? &*held[b] : nullptr,
                                    false);
      Var l = example_loss(tape, graph, ex, w_.config);
      total = b == 0 ? l : tape.add(total, l);
    }
    if (opts_.batch > 1) total = tape.scale(total, 1.0f / float(opts_.batch));
    const double loss = tape.value(total)[0];
    if (!std::isfinite(loss)) {
      throw DivergenceError("training diverged at step " + std::to_string(step_), step_);
    }
    tape.backward(total);

    double norm2 = 0.0;
    zip_slots([&](const std::string&, const Var& v, const DenseArray&) {
      for (float g : tape.grad(v).values()) norm2 += double(g) * double(g);
    }, vars, w_.p);
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) {
      throw DivergenceError("non-finite gradient at step " + std::to_string(step_), step_);
    }
    const double clip_scale = (opts_.clip > 0.0 && norm > opts_.clip) ? opts_.clip / norm : 1.0;
    ++step_;
    if (opts_.lr != 0.0) apply_update(tape, vars, clip_scale);
    return loss;
  }

 private:
  void apply_update(const GradTape<float>& tape, const WeightSlots<GradTape<float>::Var>& vars,
                    double clip_scale) {
    using Var = GradTape<float>::Var;
    if (opts_.optimizer == OptimizerKind::sgd) {
      const double lr = opts_.lr;
      zip_slots([&](const std::string&, const Var& v, DenseArray& p) {
        const auto& g = tape.grad(v);
        for (std::size_t i = 0; i < p.size(); ++i) {
          p[i] = static_cast<float>(p[i] - lr * clip_scale * g[i]);
        }
      }, vars, w_.p);
      return;
    }
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(step_));
    const double c2 = 1.0 - std::pow(b2, double(step_));
    zip_slots([&](const std::string&, const Var& v, DenseArray& p, DenseArray& m, DenseArray& s) {
      const auto& g = tape.grad(v);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = clip_scale * g[i];
        m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * gi);
        s[i] = static_cast<float>(b2 * s[i] + (1 - b2) * gi * gi);
        const double mh = m[i] / c1, sh = s[i] / c2;
        p[i] = static_cast<float>(p[i] - opts_.lr * mh / (std::sqrt(sh) + opts_.eps));
      }
    }, vars, w_.p, m_, v_);
  }

  ModelWeights<float> w_;
  TrainOptions opts_;
  Rng rng_;
  std::size_t step_ = 0;
  WeightSlots<DenseArray> m_, v_;  // Adam moments, same layout as the parameters
};

inline TrainResult train(ModelWeights<float> init, const ExampleSource& source,
                         const TrainOptions& opts, const PlanProvider& plans = {},
                         const std::function<void(std::size_t, double)>& on_step = {}) {
  if (opts.steps == 0) throw ConfigError("train: steps must be >= 1");
  Trainer trainer(std::move(init), opts);
  TrainResult res;
  res.losses.reserve(opts.steps);
  for (std::size_t s = 0; s < opts.steps; ++s) {
    res.losses.push_back(trainer.step(source, plans));
    if (on_step) on_step(s, res.losses.back());
  }
  res.weights = trainer.weights();
  return res;
}

inline ExampleSource task_source(const SyntheticTask& task) {
  return [task](Rng& rng) { return sample_example(task, rng); };
}

inline PlanProvider fixed_plans(std::optional<ModelPlans> plans) {
  if (!plans) return {};
  return [p = std::move(plans)](const TrainExample&) { return p; };
}

}  // namespace sga
