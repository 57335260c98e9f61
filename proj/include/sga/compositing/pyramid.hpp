// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "sga/quantizer/image.hpp"

namespace sga {

/// Laplacian pyramid: band-pass levels from finest to coarsest plus the
/// low-pass residual. Level i is half the resolution of level i-1.
struct Pyramid {
  std::vector<ImageGrid> bands;
  ImageGrid residual;

  std::size_t levels() const { return bands.size(); }
};

namespace detail {

inline constexpr std::array<double, 5> kBinomial{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

/// Reflect-101 border: -1 -> 1, n -> n - 2.
inline std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long m = static_cast<long>(n);
  while (i < 0 || i >= m) i = i < 0 ? -i : 2 * (m - 1) - i;
  return static_cast<std::size_t>(i);
}

// Unclamped working image; intermediate band values can be negative.
struct Plane {
  std::size_t h = 0, w = 0, c = 1;
  std::vector<double> v;
  Plane() = default;
  Plane(std::size_t h_, std::size_t w_, std::size_t c_) : h(h_), w(w_), c(c_), v(h_ * w_ * c_) {}
  double& at(std::size_t y, std::size_t x, std::size_t ch) { return v[(y * w + x) * c + ch]; }
  double at(std::size_t y, std::size_t x, std::size_t ch) const { return v[(y * w + x) * c + ch]; }
};

inline Plane to_plane(const ImageGrid& g) {
  Plane p(g.height, g.width, g.channels);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) p.v[i] = g.pixels[i];
  return p;
}

inline ImageGrid to_image(const Plane& p) {
  ImageGrid g(p.h, p.w, p.c);
  for (std::size_t i = 0; i < p.v.size(); ++i) g.pixels[i] = static_cast<float>(p.v[i]);
  return g;
}

/// Separable [1,4,6,4,1]/16 blur with reflected borders.
inline Plane blur(const Plane& in) {
  Plane tmp(in.h, in.w, in.c), out(in.h, in.w, in.c);
  for (std::size_t y = 0; y < in.h; ++y) {
    for (std::size_t x = 0; x < in.w; ++x) {
      for (std::size_t ch = 0; ch < in.c; ++ch) {
        double s = 0.0;
        for (int t = -2; t <= 2; ++t) s += kBinomial[t + 2] * in.at(y, reflect_index(long(x) + t, in.w), ch);
        tmp.at(y, x, ch) = s;
      }
    }
  }
  for (std::size_t y = 0; y < in.h; ++y) {
    for (std::size_t x = 0; x < in.w; ++x) {
      for (std::size_t ch = 0; ch < in.c; ++ch) {
        double s = 0.0;
        for (int t = -2; t <= 2; ++t) s += kBinomial[t + 2] * tmp.at(reflect_index(long(y) + t, in.h), x, ch);
        out.at(y, x, ch) = s;
      }
    }
  }
  return out;
}

/// Blur, then keep even rows and columns.
inline Plane reduce(const Plane& in) {
  const Plane b = blur(in);
  Plane out(in.h / 2, in.w / 2, in.c);
  for (std::size_t y = 0; y < out.h; ++y) {
    for (std::size_t x = 0; x < out.w; ++x) {
      for (std::size_t ch = 0; ch < in.c; ++ch) out.at(y, x, ch) = b.at(2 * y, 2 * x, ch);
    }
  }
  return out;
}

/// Zero-insertion to twice the size, blur, times 4.
inline Plane expand(const Plane& in) {
  Plane z(in.h * 2, in.w * 2, in.c);
  for (std::size_t y = 0; y < in.h; ++y) {
    for (std::size_t x = 0; x < in.w; ++x) {
      for (std::size_t ch = 0; ch < in.c; ++ch) z.at(2 * y, 2 * x, ch) = 4.0 * in.at(y, x, ch);
    }
  }
  return blur(z);
}

inline void check_levels(std::size_t h, std::size_t w, std::size_t levels, const char* who) {
  if (levels == 0) throw ParameterError(std::string(who) + ": levels must be >= 1");
  const std::size_t f = std::size_t{1} << levels;
  if (h % f != 0 || w % f != 0) {
    throw ShapeError(std::string(who) + ": image " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by 2^" + std::to_string(levels));
  }
}

struct PlanePyramid {
  std::vector<Plane> bands;
  Plane residual;
};

inline PlanePyramid build_planes(Plane g, std::size_t levels) {
  PlanePyramid p;
  for (std::size_t l = 0; l < levels; ++l) {
    Plane next = reduce(g);
    const Plane up = expand(next);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] -= up.v[i];
    p.bands.push_back(std::move(g));
    g = std::move(next);
  }
  p.residual = std::move(g);
  return p;
}

inline Plane collapse_planes(const PlanePyramid& p) {
  Plane g = p.residual;
  for (std::size_t l = p.bands.size(); l-- > 0;) {
    Plane up = expand(g);
    for (std::size_t i = 0; i < up.v.size(); ++i) up.v[i] += p.bands[l].v[i];
    g = std::move(up);
  }
  return g;
}

}  // namespace detail

/// Laplacian pyramid with `levels` band-pass levels (binomial 5-tap kernel,
/// reflected borders). Band values are signed and stored unclamped.
inline Pyramid build_pyramid(const ImageGrid& image, std::size_t levels) {
  detail::check_levels(image.height, image.width, levels, "build_pyramid");
  auto planes = detail::build_planes(detail::to_plane(image), levels);
  Pyramid p;
  for (const auto& b : planes.bands) p.bands.push_back(detail::to_image(b));
  p.residual = detail::to_image(planes.residual);
  return p;
}

/// Inverse of build_pyramid; values are not clamped.
inline ImageGrid collapse_pyramid(const Pyramid& p) {
  detail::PlanePyramid planes;
  for (const auto& b : p.bands) planes.bands.push_back(detail::to_plane(b));
  planes.residual = detail::to_plane(p.residual);
  return detail::to_image(detail::collapse_planes(planes));
}

/// Multi-band blend: weight `mask` (1 channel, values in [0, 1]) selects `a`,
/// 1 - mask selects `b`. The mask is blurred once and then carried down as a
/// Gaussian pyramid alongside the images; the output is clamped to [0, 1].
inline ImageGrid laplacian_blend(const ImageGrid& a, const ImageGrid& b, const ImageGrid& mask,
                                 std::size_t levels = 4) {
  if (!a.same_dims(b)) throw ShapeError("laplacian_blend: image dims differ");
  if (mask.height != a.height || mask.width != a.width || mask.channels != 1) {
    throw ShapeError("laplacian_blend: mask must be a single-channel image of the same size");
  }
  detail::check_levels(a.height, a.width, levels, "laplacian_blend");
  const auto pa = detail::build_planes(detail::to_plane(a), levels);
  const auto pb = detail::build_planes(detail::to_plane(b), levels);
  detail::Plane m = detail::blur(detail::to_plane(mask));

  auto mix = [](const detail::Plane& x, const detail::Plane& y, const detail::Plane& w) {
    detail::Plane out(x.h, x.w, x.c);
    for (std::size_t yy = 0; yy < x.h; ++yy) {
      for (std::size_t xx = 0; xx < x.w; ++xx) {
        const double t = w.at(yy, xx, 0);
        for (std::size_t ch = 0; ch < x.c; ++ch) {
          out.at(yy, xx, ch) = t * x.at(yy, xx, ch) + (1.0 - t) * y.at(yy, xx, ch);
        }
      }
    }
    return out;
  };

  detail::PlanePyramid blended;
  for (std::size_t l = 0; l < levels; ++l) {
    blended.bands.push_back(mix(pa.bands[l], pb.bands[l], m));
    m = detail::reduce(m);
  }
  blended.residual = mix(pa.residual, pb.residual, m);
  ImageGrid out = detail::to_image(detail::collapse_planes(blended));
  for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

/// Soft blend weights from a pixel mask (1 inside, 0 outside).
inline ImageGrid mask_weights(const MaskMap& m) {
  ImageGrid out(m.height, m.width, 1);
  for (std::size_t i = 0; i < m.bits.size(); ++i) out.pixels[i] = m[i] ? 1.0f : 0.0f;
  return out;
}

}  // namespace sga
