#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "latchange/raster.hpp"
#include "latchange/rle.hpp"

namespace latchange {

using Color = std::array<std::uint8_t, 3>;

/// Deterministic, well-separated colour for the i-th instance (golden-angle hue walk).
inline Color instance_color(std::size_t i) {
  const double h = std::fmod(static_cast<double>(i) * 137.508, 360.0) / 60.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1; g = x; break;
    case 1: r = x; g = 1; break;
    case 2: g = 1; b = x; break;
    case 3: g = x; b = 1; break;
    case 4: r = x; b = 1; break;
    default: r = 1; b = x; break;
  }
  auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(55.0 + 200.0 * v)); };
  return {q(r), q(g), q(b)};
}

/// Tints each mask's interior and draws its boundary in the instance colour.
inline RgbImage overlay_masks(RgbImage base, const std::vector<RleMask>& masks, double alpha = 0.45) {
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const Color col = instance_color(i);
    const BinaryRaster dense = decode_rle(masks[i]);
    const int h = dense.height(), w = dense.width();
    auto inside = [&](int y, int x) { return y >= 0 && x >= 0 && y < h && x < w && dense.at(y, x); };
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!dense.at(y, x)) continue;
        std::uint8_t* px = base.pixel(y, x);
        const bool edge = !inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1);
        for (int k = 0; k < 3; ++k) {
          px[k] = edge ? col[static_cast<std::size_t>(k)]
                       : static_cast<std::uint8_t>(std::lround((1.0 - alpha) * px[k] + alpha * col[static_cast<std::size_t>(k)]));
        }
      }
    }
  }
  return base;
}

/// Nearest-neighbour upscale of a small render (e.g. a PCA view at grid resolution).
inline RgbImage upscale_nearest(const RgbImage& src, ImageSize size) {
  RgbImage out(size, 0);
  for (int y = 0; y < size.height; ++y) {
    const int sy = std::min(src.size.height - 1, static_cast<int>(static_cast<long long>(y) * src.size.height / size.height));
    for (int x = 0; x < size.width; ++x) {
      const int sx = std::min(src.size.width - 1, static_cast<int>(static_cast<long long>(x) * src.size.width / size.width));
      const std::uint8_t* s = src.pixel(sy, sx);
      std::uint8_t* d = out.pixel(y, x);
      d[0] = s[0];
      d[1] = s[1];
      d[2] = s[2];
    }
  }
  return out;
}

}  // namespace latchange
