// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>

#include "sga/quantizer/image.hpp"

namespace sga {

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Normalised 11x11 Gaussian window (sigma 1.5), row-major.
inline std::array<double, kSsimWindow * kSsimWindow> ssim_window() {
  std::array<double, kSsimWindow * kSsimWindow> w{};
  const double c = double(kSsimWindow / 2);
  double total = 0.0;
  for (std::size_t y = 0; y < kSsimWindow; ++y) {
    for (std::size_t x = 0; x < kSsimWindow; ++x) {
      const double dy = double(y) - c, dx = double(x) - c;
      w[y * kSsimWindow + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * kSsimSigma * kSsimSigma));
      total += w[y * kSsimWindow + x];
    }
  }
  for (auto& v : w) v /= total;
  return w;
}

/// Mean SSIM over all fully contained 11x11 windows. Colour images are
/// reduced to their channel mean first. Pixel range is [0, 1].
inline double ssim(const ImageGrid& a, const ImageGrid& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("ssim: images differ in size");
  }
  if (a.height < kSsimWindow || a.width < kSsimWindow) {
    throw ShapeError("ssim: images must be at least 11x11");
  }
  const ImageGrid ga = to_grayscale(a), gb = to_grayscale(b);
  const auto w = ssim_window();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + kSsimWindow <= ga.height; ++y) {
    for (std::size_t x = 0; x + kSsimWindow <= ga.width; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < kSsimWindow; ++i) {
        for (std::size_t j = 0; j < kSsimWindow; ++j) {
          const double wt = w[i * kSsimWindow + j];
          const double va = ga.at(y + i, x + j), vb = gb.at(y + i, x + j);
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) /
               ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
      ++count;
    }
  }
  return total / double(count);
}

}  // namespace sga
