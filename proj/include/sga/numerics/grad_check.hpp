// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "sga/core/rng.hpp"
#include "sga/numerics/grad_tape.hpp"

namespace sga {

template <std::floating_point T>
using TapeFunction =
    std::function<typename GradTape<T>::Var(GradTape<T>&, const std::vector<typename GradTape<T>::Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Compares tape gradients with central differences.
///
/// Error per coordinate is |analytic - fd| / max(|analytic|, |fd|, 1e-8).
/// With max_coords set, a seeded random subset of coordinates is checked.
template <std::floating_point T>
GradCheckResult grad_check(const TapeFunction<T>& f, const std::vector<Array<T>>& points, T step,
                           std::optional<std::size_t> max_coords = std::nullopt,
                           std::uint64_t seed = 0) {
  if (!(step > T{0})) throw ParameterError("grad_check: step must be positive");
  GradTape<T> tape(true);
  std::vector<typename GradTape<T>::Var> vars;
  for (const auto& p : points) vars.push_back(tape.parameter(p));
  const auto out = f(tape, vars);
  if (tape.value(out).size() != 1) throw ShapeError("grad_check: function must be scalar");
  if (!tape.value(out).all_finite()) throw NumericalError("grad_check: non-finite value");
  tape.backward(out);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t a = 0; a < points.size(); ++a) {
    for (std::size_t i = 0; i < points[a].size(); ++i) coords.emplace_back(a, i);
  }
  if (max_coords && coords.size() > *max_coords) {
    Rng rng(seed);
    for (std::size_t i = 0; i < *max_coords; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(*max_coords);
  }

  std::vector<Array<T>> analytic;
  for (auto v : vars) analytic.push_back(tape.grad(v));

  GradCheckResult res;
  res.coordinates = coords.size();
  for (auto [a, i] : coords) {
    Array<T>& x = tape.leaf_value(vars[a]);
    const T orig = x[i];
    x[i] = orig + step;
    tape.replay();
    const T fp = tape.value(out)[0];
    x[i] = orig - step;
    tape.replay();
    const T fm = tape.value(out)[0];
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalError("grad_check: non-finite evaluation near the point");
    }
    const double fd = (double(fp) - double(fm)) / (2.0 * double(step));
    const double an = double(analytic[a][i]);
    const double denom = std::max({std::abs(an), std::abs(fd), 1e-8});
    const double rel = std::abs(an - fd) / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_input = a;
      res.worst_index = i;
    }
  }
  tape.replay();
  return res;
}

/// Single-input convenience form.
template <std::floating_point T>
GradCheckResult grad_check(
    const std::function<typename GradTape<T>::Var(GradTape<T>&, typename GradTape<T>::Var)>& f,
    const Array<T>& point, T step) {
  TapeFunction<T> g = [&f](GradTape<T>& t, const std::vector<typename GradTape<T>::Var>& v) {
    return f(t, v[0]);
  };
  return grad_check<T>(g, std::vector<Array<T>>{point}, step);
}

}  // namespace sga
