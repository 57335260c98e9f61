// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sga/core/error.hpp"
#include "sga/numerics/dense_array.hpp"

namespace sga {

/// Additive pre-softmax mask whose entries are either 0 (kept) or -inf.
///
/// Stored as keep flags so the two-sentinel invariant holds by construction.
class AttentionMask {
 public:
  AttentionMask() = default;

  AttentionMask(std::size_t rows, std::size_t cols, bool keep = true)
      : rows_(rows), cols_(cols), keep_(rows * cols, keep ? 1 : 0) {}

  // Accepts a dense additive mask; anything other than 0 or -inf is rejected.
  template <std::floating_point T>
  static AttentionMask from_additive(const Array<T>& additive) {
    if (additive.rank() != 2) throw ShapeError("attention mask must be rank 2");
    AttentionMask m(additive.rows(), additive.cols());
    for (std::size_t i = 0; i < additive.size(); ++i) {
      const T v = additive[i];
      if (v == T{0}) {
        m.keep_[i] = 1;
      } else if (std::isinf(v) && v < 0) {
        m.keep_[i] = 0;
      } else {
        throw ValidationError("attention mask entry " + std::to_string(v) +
                              " is neither 0 nor -inf");
      }
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  bool kept(std::size_t r, std::size_t c) const { return keep_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool keep) { keep_[r * cols_ + c] = keep ? 1 : 0; }

  float value(std::size_t r, std::size_t c) const {
    return kept(r, c) ? 0.0f : -std::numeric_limits<float>::infinity();
  }

  std::size_t kept_count() const {
    std::size_t n = 0;
    for (auto k : keep_) n += k;
    return n;
  }

  bool row_degenerate(std::size_t r) const {
    for (std::size_t c = 0; c < cols_; ++c) {
      if (kept(r, c)) return false;
    }
    return true;
  }

  template <std::floating_point T = float>
  Array<T> to_additive() const {
    Array<T> out({rows_, cols_});
    for (std::size_t i = 0; i < keep_.size(); ++i) {
      out[i] = keep_[i] ? T{0} : -std::numeric_limits<T>::infinity();
    }
    return out;
  }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> keep_;
};

/// Entry (r, t) kept iff t <= r.
inline AttentionMask causal_mask(std::size_t length) {
  if (length == 0) throw ShapeError("causal_mask requires length >= 1");
  AttentionMask m(length, length, false);
  for (std::size_t r = 0; r < length; ++r) {
    for (std::size_t t = 0; t <= r; ++t) m.set(r, t, true);
  }
  return m;
}

/// Entrywise minimum of two additive masks: kept only if kept in both.
inline AttentionMask combine_masks(const AttentionMask& a, const AttentionMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("combine_masks: shape mismatch");
  }
  AttentionMask out(a.rows(), a.cols(), false);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      out.set(r, c, a.kept(r, c) && b.kept(r, c));
    }
  }
  return out;
}

}  // namespace sga
