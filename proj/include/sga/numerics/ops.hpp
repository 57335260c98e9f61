// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "sga/attention/mask.hpp"
#include "sga/core/error.hpp"
#include "sga/numerics/dense_array.hpp"

namespace sga {

namespace detail {

inline void require_rank(const auto& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_string(a.shape()));
  }
}

// c[m x n] += a[m x k] * b[k x n], i-k-j order so the inner loop vectorizes.
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const T av = arow[t];
      if (av == T{0}) continue;
      const T* brow = b + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <std::floating_point T>
Array<T> matmul(const Array<T>& a, const Array<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()) + ")");
  }
  Array<T> c({a.rows(), b.cols()});
  detail::gemm_accumulate(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

template <std::floating_point T>
Array<T> transpose(const Array<T>& a) {
  detail::require_rank(a, 2, "transpose");
  Array<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

// a * b^T
template <std::floating_point T>
Array<T> matmul_nt(const Array<T>& a, const Array<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: shape mismatch");
  }
  return matmul(a, transpose(b));
}

// a^T * b
template <std::floating_point T>
Array<T> matmul_tn(const Array<T>& a, const Array<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: shape mismatch");
  }
  return matmul(transpose(a), b);
}

template <std::floating_point T>
Array<T> add(const Array<T>& a, const Array<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Array<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

template <std::floating_point T>
Array<T> scale(const Array<T>& a, T s) {
  Array<T> c = a;
  for (auto& v : c.values()) v *= s;
  return c;
}

// Adds a length-d vector to every row of an n x d matrix.
template <std::floating_point T>
Array<T> add_row(const Array<T>& x, const Array<T>& bias) {
  detail::require_rank(x, 2, "add_row");
  if (bias.size() != x.cols()) throw ShapeError("add_row: bias length mismatch");
  Array<T> c = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = c.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  return c;
}

/// Row softmax of `scores` restricted to entries kept by `mask`.
///
/// Stabilized by subtracting the row maximum over kept entries. Masked entries
/// come out exactly 0. A row with no kept entry raises DegenerateRowError.
template <std::floating_point T>
Array<T> masked_softmax(const Array<T>& scores, const AttentionMask& mask) {
  detail::require_rank(scores, 2, "masked_softmax");
  if (mask.rows() != scores.rows() || mask.cols() != scores.cols()) {
    throw ShapeError("masked_softmax: mask shape mismatch");
  }
  Array<T> out({scores.rows(), scores.cols()});
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      if (mask.kept(r, c)) {
        mx = any ? std::max(mx, scores(r, c)) : scores(r, c);
        any = true;
      }
    }
    if (!any) {
      throw DegenerateRowError("masked_softmax: row " + std::to_string(r) +
                                   " is fully masked",
                               r);
    }
    T sum{0};
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      if (mask.kept(r, c)) {
        const T e = std::exp(scores(r, c) - mx);
        out(r, c) = e;
        sum += e;
      }
    }
    const T inv = T{1} / sum;
    for (std::size_t c = 0; c < scores.cols(); ++c) out(r, c) *= inv;
  }
  return out;
}

/// Mean over non-overlapping kernel x kernel tiles (kernel == stride).
template <std::floating_point T>
Array<T> avg_pool_matrix(const Array<T>& m, std::size_t kernel) {
  detail::require_rank(m, 2, "avg_pool_matrix");
  if (kernel == 0 || m.rows() % kernel != 0 || m.cols() % kernel != 0) {
    throw ShapeError("avg_pool_matrix: kernel " + std::to_string(kernel) +
                     " does not divide " + shape_string(m.shape()));
  }
  const std::size_t orows = m.rows() / kernel;
  const std::size_t ocols = m.cols() / kernel;
  Array<T> out({orows, ocols});
  const T inv = T{1} / static_cast<T>(kernel * kernel);
  for (std::size_t i = 0; i < orows; ++i) {
    for (std::size_t j = 0; j < ocols; ++j) {
      T acc{0};
      for (std::size_t a = 0; a < kernel; ++a) {
        for (std::size_t b = 0; b < kernel; ++b) {
          acc += m(i * kernel + a, j * kernel + b);
        }
      }
      out(i, j) = acc * inv;
    }
  }
  return out;
}

inline constexpr std::size_t kPegKernel = 5;
inline constexpr std::ptrdiff_t kPegPad = 2;

/// A rectangular sub-grid of tokens that the positional convolution treats as
/// an independent image. `tokens` lists sequence positions in row-major order
/// of the sub-grid.
struct PegRegion {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> tokens;
};

inline std::vector<PegRegion> whole_grid_region(std::size_t height, std::size_t width) {
  PegRegion r{height, width, {}};
  r.tokens.resize(height * width);
  for (std::size_t i = 0; i < r.tokens.size(); ++i) r.tokens[i] = i;
  return {std::move(r)};
}

namespace detail {

template <typename T>
void check_peg_kernel(const Array<T>& kernel, std::size_t channels) {
  if (kernel.rank() != 3 || kernel.dim(0) != kPegKernel || kernel.dim(1) != kPegKernel ||
      kernel.dim(2) != channels) {
    throw ShapeError("peg: kernel must be 5x5x" + std::to_string(channels) + ", got " +
                     shape_string(kernel.shape()));
  }
}

}  // namespace detail

/// Residual depth-wise 5x5 convolution (zero padding 2) applied independently
/// inside each region. `x` is L x d, one row per token.
template <std::floating_point T>
Array<T> peg_regions(const Array<T>& x, const Array<T>& kernel,
                     const std::vector<PegRegion>& regions) {
  detail::require_rank(x, 2, "peg");
  const std::size_t d = x.cols();
  detail::check_peg_kernel(kernel, d);
  Array<T> out = x;
  for (const auto& reg : regions) {
    const auto h = static_cast<std::ptrdiff_t>(reg.height);
    const auto w = static_cast<std::ptrdiff_t>(reg.width);
    for (std::ptrdiff_t i = 0; i < h; ++i) {
      for (std::ptrdiff_t j = 0; j < w; ++j) {
        T* dst = out.data() + reg.tokens[i * w + j] * d;
        for (std::ptrdiff_t ky = 0; ky < 5; ++ky) {
          const std::ptrdiff_t si = i + ky - kPegPad;
          if (si < 0 || si >= h) continue;
          for (std::ptrdiff_t kx = 0; kx < 5; ++kx) {
            const std::ptrdiff_t sj = j + kx - kPegPad;
            if (sj < 0 || sj >= w) continue;
            const T* src = x.data() + reg.tokens[si * w + sj] * d;
            const T* kw = kernel.data() + (ky * 5 + kx) * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += kw[c] * src[c];
          }
        }
      }
    }
  }
  return out;
}

/// Residual depth-wise 5x5 convolution of an H x W x d feature grid.
template <std::floating_point T>
Array<T> peg(const Array<T>& grid_features, const Array<T>& kernel) {
  detail::require_rank(grid_features, 3, "peg");
  const std::size_t h = grid_features.dim(0);
  const std::size_t w = grid_features.dim(1);
  const std::size_t d = grid_features.dim(2);
  if (h == 0 || w == 0) throw ShapeError("peg: empty grid");
  detail::check_peg_kernel(kernel, d);
  const Array<T> flat = grid_features.reshaped({h * w, d});
  return peg_regions(flat, kernel, whole_grid_region(h, w)).reshaped({h, w, d});
}

inline constexpr double kLayerNormEps = 1e-5;

template <std::floating_point T>
Array<T> layer_norm(const Array<T>& x, const Array<T>& gain, const Array<T>& bias) {
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t d = x.cols();
  if (d == 0) throw ShapeError("layer_norm: d must be >= 1");
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: gain/bias length mismatch");
  }
  Array<T> out({x.rows(), d});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    T mean{0};
    for (T v : in) mean += v;
    mean /= static_cast<T>(d);
    T var{0};
    for (T v : in) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) o[c] = (in[c] - mean) * inv * gain[c] + bias[c];
  }
  return out;
}

// tanh-approximated GELU and its derivative.
template <std::floating_point T>
T gelu_scalar(T x) {
  constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T u = k * (x + static_cast<T>(0.044715) * x * x * x);
  return static_cast<T>(0.5) * x * (T{1} + std::tanh(u));
}

template <std::floating_point T>
T gelu_derivative(T x) {
  constexpr T k = static_cast<T>(0.7978845608028654);
  const T x2 = x * x;
  const T u = k * (x + static_cast<T>(0.044715) * x2 * x);
  const T th = std::tanh(u);
  const T du = k * (T{1} + static_cast<T>(3 * 0.044715) * x2);
  return static_cast<T>(0.5) * (T{1} + th) +
         static_cast<T>(0.5) * x * (T{1} - th * th) * du;
}

template <std::floating_point T>
Array<T> gelu(const Array<T>& x) {
  Array<T> out = x;
  for (auto& v : out.values()) v = gelu_scalar(v);
  return out;
}

// Log-sum-exp of a row, stabilized.
template <std::floating_point T>
T log_sum_exp(std::span<const T> row) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : row) mx = std::max(mx, v);
  T s{0};
  for (T v : row) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace sga
