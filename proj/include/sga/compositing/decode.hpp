// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>

#include <Eigen/Dense>

#include "sga/quantizer/codebook.hpp"

namespace sga {

/// Least-squares inverse of a (patch*patch*channels) x d encoder projection,
/// returned as d x (patch*patch*channels).
inline DenseArray projection_pseudo_inverse(const DenseArray& projection) {
  if (projection.rank() != 2) throw ShapeError("pseudo-inverse: projection must be 2-D");
  const auto n = static_cast<Eigen::Index>(projection.rows());
  const auto d = static_cast<Eigen::Index>(projection.cols());
  Eigen::MatrixXd p(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) p(i, j) = projection(std::size_t(i), std::size_t(j));
  }
  const Eigen::MatrixXd pinv = p.completeOrthogonalDecomposition().pseudoInverse();
  DenseArray out({std::size_t(d), std::size_t(n)});
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(std::size_t(i), std::size_t(j)) = float(pinv(i, j));
  }
  return out;
}

/// Visualisation decoder: each token's codebook vector times the projection
/// pseudo-inverse gives its patch (pixel order py, px, c, as in
/// encode_patches). Pixels are clamped to [0, 1].
inline ImageGrid tokens_to_image(const TokenGrid& tokens, const Codebook& codebook,
                                 const DenseArray& inverse, std::size_t patch,
                                 std::size_t channels) {
  if (tokens.has_mask()) throw IncompleteGridError("tokens_to_image: grid still contains MASK");
  tokens.validate();
  if (tokens.vocab != codebook.size()) {
    throw ShapeError("tokens_to_image: token vocabulary differs from codebook size");
  }
  const std::size_t n = patch * patch * channels;
  if (inverse.rank() != 2 || inverse.rows() != codebook.dim() || inverse.cols() != n) {
    throw ShapeError("tokens_to_image: inverse must be " + std::to_string(codebook.dim()) + "x" +
                     std::to_string(n));
  }
  ImageGrid out(tokens.height * patch, tokens.width * patch, channels);
  std::vector<double> vec(n);
  const std::size_t d = codebook.dim();
  for (std::size_t i = 0; i < tokens.height; ++i) {
    for (std::size_t j = 0; j < tokens.width; ++j) {
      const float* e = codebook.entries.data() + std::size_t(tokens.at(i, j)) * d;
      std::fill(vec.begin(), vec.end(), 0.0);
      for (std::size_t a = 0; a < d; ++a) {
        const float* row = inverse.data() + a * n;
        for (std::size_t t = 0; t < n; ++t) vec[t] += double(e[a]) * row[t];
      }
      std::size_t t = 0;
      for (std::size_t py = 0; py < patch; ++py) {
        for (std::size_t px = 0; px < patch; ++px) {
          for (std::size_t c = 0; c < channels; ++c) {
            out.at(i * patch + py, j * patch + px, c) =
                static_cast<float>(std::clamp(vec[t++], 0.0, 1.0));
          }
        }
      }
    }
  }
  return out;
}

}  // namespace sga
