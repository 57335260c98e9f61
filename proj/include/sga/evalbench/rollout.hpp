// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "sga/numerics/ops.hpp"

namespace sga {

/// Mean over heads of equally shaped attention maps.
template <std::floating_point T>
Array<T> head_average(const std::vector<Array<T>>& heads) {
  if (heads.empty()) throw ShapeError("head_average: no heads");
  Array<double> acc(heads[0].shape());
  for (const auto& h : heads) {
    if (h.shape() != acc.shape()) throw ShapeError("head_average: head shapes differ");
    for (std::size_t i = 0; i < h.size(); ++i) acc[i] += h[i];
  }
  Array<T> out(acc.shape());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i] / double(heads.size()));
  return out;
}

/// Attention rollout over layers (first layer first): each head-averaged map
/// gets the residual correction R = rownorm(0.5 A + 0.5 I), and the result is
/// R_last * ... * R_first.
template <std::floating_point T>
Array<T> attention_rollout(const std::vector<Array<T>>& layers, double tolerance = 1e-4) {
  if (layers.empty()) throw ShapeError("attention_rollout: no layers");
  const std::size_t n = layers[0].rows();
  Array<double> acc = Array<double>::identity(n);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& a = layers[li];
    if (a.rank() != 2 || a.rows() != n || a.cols() != n) {
      throw ShapeError("attention_rollout: layer " + std::to_string(li) + " is not " +
                       std::to_string(n) + "x" + std::to_string(n));
    }
    Array<double> r({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = a(i, j);
        if (!std::isfinite(v) || v < 0.0) {
          throw ValidationError("attention_rollout: layer " + std::to_string(li) +
                                " has a negative or non-finite entry");
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > tolerance) {
        throw ValidationError("attention_rollout: layer " + std::to_string(li) + " row " +
                              std::to_string(i) + " sums to " + std::to_string(sum));
      }
      double rsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        r(i, j) = 0.5 * double(a(i, j)) + (i == j ? 0.5 : 0.0);
        rsum += r(i, j);
      }
      for (std::size_t j = 0; j < n; ++j) r(i, j) /= rsum;
    }
    acc = matmul(r, acc);
  }
  return acc.cast<T>();
}

}  // namespace sga
