#pragma once

#include <cstdlib>

#include "refeednet/types.hpp"

namespace refeednet {

// Horizontal mirror: column j -> W-1-j.
inline Tensor reflect_h(const Tensor& img) {
  Tensor out(img.shape());
  const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) out.at(y, w - 1 - x, k) = img.at(y, x, k);
  return out;
}

inline LabeledImage reflect_h(const LabeledImage& img) {
  return {reflect_h(img.pixels), img.label, img.source_id};
}

// Shift content by (dx, dy) pixels; positive dx moves right, positive dy moves
// down. Vacated pixels are zero.
inline Tensor translate(const Tensor& img, int dx, int dy) {
  const auto h = static_cast<int>(img.shape()[0]);
  const auto w = static_cast<int>(img.shape()[1]);
  const std::size_t c = img.shape()[2];
  if (std::abs(dx) >= w || std::abs(dy) >= h)
    throw Error(ErrorKind::Range, "translation (" + std::to_string(dx) + "," + std::to_string(dy) +
                                      ") out of range for " + shape_string(img.shape()));
  Tensor out(img.shape());
  for (int y = 0; y < h; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (int x = 0; x < w; ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= w) continue;
      for (std::size_t k = 0; k < c; ++k)
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), k) =
            img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), k);
    }
  }
  return out;
}

inline LabeledImage translate(const LabeledImage& img, int dx, int dy) {
  return {translate(img.pixels, dx, dy), img.label, img.source_id};
}

}  // namespace refeednet
