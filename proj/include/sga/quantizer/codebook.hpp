// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "sga/core/rng.hpp"
#include "sga/numerics/ops.hpp"
#include "sga/numerics/sgat.hpp"
#include "sga/quantizer/image.hpp"
#include "sga/quantizer/token_grid.hpp"

namespace sga {

/// |Z| x d dictionary of codebook entries.
struct Codebook {
  DenseArray entries;

  std::size_t size() const { return entries.rows(); }
  std::size_t dim() const { return entries.cols(); }

  void validate() const {
    if (entries.rank() != 2 || entries.rows() < 2) {
      throw ValidationError("codebook needs at least 2 entries");
    }
    if (!entries.all_finite()) throw ValidationError("codebook has non-finite entries");
  }
};

inline void save_codebook(const std::filesystem::path& path, const Codebook& cb) {
  write_sgat(path, cb.entries);
}

inline Codebook load_codebook(const std::filesystem::path& path) {
  Codebook cb{read_sgat(path)};
  cb.validate();
  return cb;
}

/// Linear per-patch encoder: each patch (flattened y, x, channel) times a
/// (patch*patch*channels) x d projection. Output is H/patch x W/patch x d and
/// every feature depends on its own patch only.
inline DenseArray encode_patches(const ImageGrid& image, std::size_t patch,
                                 const DenseArray& projection) {
  if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
    throw ShapeError("encode_patches: patch " + std::to_string(patch) + " does not divide " +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const std::size_t n = patch * patch * image.channels;
  if (projection.rank() != 2 || projection.rows() != n) {
    throw ShapeError("encode_patches: projection must have " + std::to_string(n) + " rows, got " +
                     shape_string(projection.shape()));
  }
  const std::size_t d = projection.cols();
  const std::size_t hf = image.height / patch;
  const std::size_t wf = image.width / patch;
  DenseArray out({hf, wf, d});
  std::vector<float> vec(n);
  for (std::size_t i = 0; i < hf; ++i) {
    for (std::size_t j = 0; j < wf; ++j) {
      std::size_t t = 0;
      for (std::size_t py = 0; py < patch; ++py) {
        for (std::size_t px = 0; px < patch; ++px) {
          for (std::size_t c = 0; c < image.channels; ++c) {
            vec[t++] = image.at(i * patch + py, j * patch + px, c);
          }
        }
      }
      float* dst = &out(i, j, 0);
      detail::gemm_accumulate(vec.data(), projection.data(), dst, 1, n, d);
    }
  }
  return out;
}

/// Seeded Gaussian projection, scaled by 1/sqrt(fan_in).
inline DenseArray random_projection(std::size_t patch, std::size_t channels, std::size_t d,
                                    std::uint64_t seed) {
  const std::size_t n = patch * patch * channels;
  DenseArray p({n, d});
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(double(n));
  for (auto& v : p.values()) v = static_cast<float>(rng.normal() * s);
  return p;
}

namespace detail {

inline double squared_distance(const float* a, const float* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = double(a[c]) - double(b[c]);
    acc += diff * diff;
  }
  return acc;
}

inline std::size_t nearest_entry(const float* x, const DenseArray& entries) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < entries.rows(); ++k) {
    const double dist = squared_distance(x, entries.data() + k * entries.cols(), entries.cols());
    if (dist < best_d) {
      best_d = dist;
      best = k;
    }
  }
  return best;
}

inline std::size_t count_distinct_rows(const DenseArray& x) {
  std::vector<std::vector<float>> rows;
  rows.reserve(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) rows.emplace_back(x.row(r).begin(), x.row(r).end());
  std::sort(rows.begin(), rows.end());
  return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

}  // namespace detail

struct CodebookFit {
  Codebook codebook;
  std::vector<double> energy;  // assignment energy after each iteration
};

/// k-means with k-means++ seeding. `features` is n x d.
inline CodebookFit fit_codebook_traced(const DenseArray& features, std::size_t size,
                                       std::size_t iterations, std::uint64_t seed) {
  if (features.rank() != 2) throw ShapeError("fit_codebook: features must be n x d");
  if (size < 2) throw ParameterError("fit_codebook: codebook size must be >= 2");
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (n < size || detail::count_distinct_rows(features) < size) {
    throw InsufficientDataError("fit_codebook: need at least " + std::to_string(size) +
                                " distinct feature vectors");
  }
  Rng rng(seed);
  DenseArray centroids({size, d});
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  std::copy_n(features.data() + first * d, d, centroids.data());
  for (std::size_t c = 1; c < size; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], detail::squared_distance(features.data() + i * d,
                                                           centroids.data() + (c - 1) * d, d));
      total += dist[i];
    }
    double u = rng.uniform() * total;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (dist[i] <= 0.0) continue;
      pick = i;
      if (u < dist[i]) break;
      u -= dist[i];
    }
    std::copy_n(features.data() + pick * d, d, centroids.data() + c * d);
  }

  CodebookFit fit;
  std::vector<std::size_t> assign(n);
  std::vector<double> sums(size * d);
  std::vector<std::size_t> counts(size);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      assign[i] = detail::nearest_entry(features.data() + i * d, centroids);
    }
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t c = 0; c < d; ++c) sums[assign[i] * d + c] += features(i, c);
    }
    for (std::size_t k = 0; k < size; ++k) {
      if (counts[k] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t c = 0; c < d; ++c) {
        centroids(k, c) = static_cast<float>(sums[k * d + c] / double(counts[k]));
      }
    }
    double energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = detail::nearest_entry(features.data() + i * d, centroids);
      energy += detail::squared_distance(features.data() + i * d, centroids.data() + k * d, d);
    }
    fit.energy.push_back(energy);
  }
  fit.codebook = Codebook{std::move(centroids)};
  fit.codebook.validate();
  return fit;
}

inline Codebook fit_codebook(const DenseArray& features, std::size_t size,
                             std::size_t iterations = 50, std::uint64_t seed = 0) {
  return fit_codebook_traced(features, size, iterations, seed).codebook;
}

/// Flattens an H x W x d feature grid to (H*W) x d.
inline DenseArray flatten_features(const DenseArray& grid) {
  if (grid.rank() != 3) throw ShapeError("flatten_features: expected H x W x d");
  return grid.reshaped({grid.dim(0) * grid.dim(1), grid.dim(2)});
}

/// Nearest codebook entry per position, ties to the lowest index.
inline TokenGrid quantize(const DenseArray& features, const Codebook& codebook) {
  if (features.rank() != 3) throw ShapeError("quantize: features must be H x W x d");
  if (features.dim(2) != codebook.dim()) {
    throw ShapeError("quantize: feature dim " + std::to_string(features.dim(2)) +
                     " != codebook dim " + std::to_string(codebook.dim()));
  }
  const std::size_t h = features.dim(0), w = features.dim(1), d = features.dim(2);
  TokenGrid out(h, w, codebook.size());
  for (std::size_t i = 0; i < h * w; ++i) {
    out.tokens[i] =
        static_cast<Token>(detail::nearest_entry(features.data() + i * d, codebook.entries));
  }
  return out;
}

}  // namespace sga
