#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "mimco/errors.hpp"
#include "mimco/rng.hpp"

namespace mimco {

// H×W×C floats in [0, 1], stored row-major with channel fastest.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

inline std::size_t patch_dim(std::size_t patch, std::size_t channels) { return patch * patch * channels; }

inline void check_patch_grid(const Image& img, std::size_t patch) {
  if (patch == 0 || img.height == 0 || img.height % patch != 0 || img.width % patch != 0)
    throw ShapeError(detail::concat("image ", img.height, "x", img.width, " not divisible by patch size ",
                                    patch));
}

// Patches in raster order (top-left to bottom-right). Each patch is flattened
// row, then column, then channel: element (py, px, c) sits at
// (py·p + px)·C + c.
template <class T = float>
std::vector<T> patchify(const Image& img, std::size_t patch) {
  check_patch_grid(img, patch);
  const std::size_t gy = img.height / patch, gx = img.width / patch;
  const std::size_t pd = patch_dim(patch, img.channels);
  std::vector<T> out(gy * gx * pd);
  for (std::size_t by = 0; by < gy; ++by)
    for (std::size_t bx = 0; bx < gx; ++bx) {
      T* dst = out.data() + (by * gx + bx) * pd;
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t c = 0; c < img.channels; ++c)
            *dst++ = static_cast<T>(img.at(by * patch + py, bx * patch + px, c));
    }
  return out;
}

inline std::size_t patch_count(const Image& img, std::size_t patch) {
  check_patch_grid(img, patch);
  return (img.height / patch) * (img.width / patch);
}

// Random horizontal flip, then a random crop from the image zero-padded by
// `pad` pixels on every side. All draws come from the given engine.
inline Image augment_flip_crop(const Image& img, std::size_t pad, Engine& engine) {
  const bool flip = std::uniform_int_distribution<int>(0, 1)(engine) == 1;
  const auto span = static_cast<long>(2 * pad);
  const long oy = std::uniform_int_distribution<long>(0, span)(engine) - static_cast<long>(pad);
  const long ox = std::uniform_int_distribution<long>(0, span)(engine) - static_cast<long>(pad);
  Image out(img.height, img.width, img.channels);
  const auto h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const long sy = y + oy;
      long sx = x + ox;
      if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
      if (flip) sx = w - 1 - sx;
      for (std::size_t c = 0; c < img.channels; ++c)
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
    }
  return out;
}

}  // namespace mimco
