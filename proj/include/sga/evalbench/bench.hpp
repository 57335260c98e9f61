// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sga/sparse/sparse_attention.hpp"

namespace sga {

struct BenchOptions {
  std::vector<std::size_t> lengths{1024, 4096};
  std::size_t d = 64;
  std::vector<PlanKind> variants{PlanKind::full, PlanKind::guided, PlanKind::local};
  std::size_t repeats = 5;
  std::size_t blocks = 64;
  std::size_t radius = 1;
  std::size_t k = 3;
  std::size_t window = 3;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::size_t length = 0;
  std::string variant;
  std::uint64_t score_flops = 0;
  double flop_ratio = 1.0;  // score_flops / dense score_flops
  double median_ms = 0.0;
  std::vector<double> runs_ms;
  double sparsity = 1.0;
  std::size_t peak_entries = 0;
};

struct BenchReport {
  std::size_t d = 0;
  std::size_t repeats = 0;
  std::vector<BenchRow> rows;

  const BenchRow* find(std::size_t length, const std::string& variant) const {
    for (const auto& r : rows) {
      if (r.length == length && r.variant == variant) return &r;
    }
    return nullptr;
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ParameterError("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Guided plan for benchmarking: affinities pooled from a random row-stochastic
/// low-resolution map. Every guided plan with the same (N, radius, K) keeps
/// the same number of blocks, so the cost does not depend on the map itself.
inline SparsityPlan bench_guided_plan(std::size_t blocks, std::size_t k, std::size_t radius,
                                      std::uint64_t seed) {
  const std::size_t low = blocks * 4;
  Rng rng(seed);
  Array<float> a({low, low});
  for (std::size_t i = 0; i < low; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < low; ++j) s += (a(i, j) = float(rng.uniform()));
    for (std::size_t j = 0; j < low; ++j) a(i, j) = float(a(i, j) / s);
  }
  SparsityPlan p = select_plan(block_affinity(a, blocks), k, radius);
  p.provenance = PlanKind::guided;
  return p;
}

inline SparsityPlan bench_plan(PlanKind kind, const BenchOptions& o) {
  switch (kind) {
    case PlanKind::full:
      return full_plan(o.blocks);
    case PlanKind::guided:
      return bench_guided_plan(o.blocks, o.k, o.radius, derive_seed(o.seed, "bench-guided"));
    case PlanKind::oracle:
      throw ParameterError("benchmark: oracle plans need a task");
    default:
      return variant_plan(kind, {o.blocks, o.radius, o.k, o.window},
                          derive_seed(o.seed, "bench-" + to_string(kind)));
  }
}

/// Wall-clock and cost comparison of dense attention against block-sparse
/// variants. `full` is timed through the dense kernel (materialising L x L);
/// every other variant runs the sparse kernel. One warm-up run is discarded.
inline BenchReport benchmark(const BenchOptions& o) {
  if (o.repeats < 5) throw ParameterError("benchmark: repeats must be >= 5");
  if (o.d == 0) throw ParameterError("benchmark: d must be positive");
  using clock = std::chrono::steady_clock;
  BenchReport rep;
  rep.d = o.d;
  rep.repeats = o.repeats;
  for (std::size_t L : o.lengths) {
    if (L < o.blocks) throw ParameterError("benchmark: L smaller than block count");
    Rng rng(derive_seed(o.seed, "bench-qkv", L));
    auto rand = [&] {
      Array<float> a({L, o.d});
      for (auto& v : a.values()) v = float(rng.normal());
      return a;
    };
    const Array<float> q = rand(), k = rand(), v = rand();
    const BlockPartition part = partition(L, o.blocks, PartitionMode::contiguous_1d);
    const std::uint64_t dense_flops = dense_score_flops(L, L, o.d);
    for (PlanKind kind : o.variants) {
      BenchRow row;
      row.length = L;
      row.variant = kind == PlanKind::full ? "dense" : to_string(kind);
      std::vector<double> runs;
      if (kind == PlanKind::full) {
        row.score_flops = dense_flops;
        row.sparsity = 1.0;
        row.peak_entries = L * L;
        for (std::size_t r = 0; r <= o.repeats; ++r) {
          const auto t0 = clock::now();
          auto res = dense_attention(q, k, v);
          const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
          if (res.output.size() == 0) throw ValidationError("benchmark: empty output");
          if (r > 0) runs.push_back(ms);
        }
      } else {
        const SparsityPlan plan = bench_plan(kind, o);
        row.score_flops = sparse_score_flops(plan, L, L, o.d);
        row.sparsity = sparsity_ratio(plan);
        for (std::size_t r = 0; r <= o.repeats; ++r) {
          const auto t0 = clock::now();
          auto res = sparse_attention(q, k, v, plan, part, part);
          const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
          row.peak_entries = res.peak_score_entries;
          if (r > 0) runs.push_back(ms);
        }
      }
      row.flop_ratio = double(row.score_flops) / double(dense_flops);
      row.runs_ms = runs;
      row.median_ms = median(runs);
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

inline nlohmann::json bench_to_json(const BenchReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"L", r.length},
                    {"variant", r.variant},
                    {"score_flops", r.score_flops},
                    {"flop_ratio", r.flop_ratio},
                    {"median_ms", r.median_ms},
                    {"runs_ms", r.runs_ms},
                    {"sparsity", r.sparsity},
                    {"peak_entries", r.peak_entries}});
  }
  return {{"d", rep.d}, {"repeats", rep.repeats}, {"rows", rows}};
}

inline std::string bench_to_text(const BenchReport& rep) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%6s  %-8s  %16s  %9s  %11s  %9s  %12s\n", "L", "variant",
                "score_flops", "flop/den", "median_ms", "sparsity", "peak_entries");
  os << buf;
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%6zu  %-8s  %16llu  %9.5f  %11.3f  %9.5f  %12zu\n", r.length,
                  r.variant.c_str(), static_cast<unsigned long long>(r.score_flops), r.flop_ratio,
                  r.median_ms, r.sparsity, r.peak_entries);
    os << buf;
  }
  return os.str();
}

}  // namespace sga
