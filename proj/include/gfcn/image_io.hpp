#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gfcn/tensor.hpp"

namespace gfcn {

/// 8-bit interleaved pixels, row-major; 1 (gray) or 3 (RGB) channels.
struct Image8 {
  Index width = 0, height = 0, channels = 1;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(Index w, Index h, Index c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w * h * c)) {}
  std::uint8_t& at(Index y, Index x, Index c = 0) { return pixels[static_cast<std::size_t>((y * width + x) * channels + c)]; }
  std::uint8_t at(Index y, Index x, Index c = 0) const { return pixels[static_cast<std::size_t>((y * width + x) * channels + c)]; }
};

/// Reads PNG (gray, gray+alpha, RGB, RGBA, palette; alpha is dropped) or binary
/// and ASCII netpbm (P2, P3, P5, P6). Throws std::runtime_error on failure.
Image8 read_image(const std::filesystem::path& path);
/// Writes PNG, or binary netpbm when the extension is .pgm/.ppm.
void write_image(const std::filesystem::path& path, const Image8& image);

/// Luma 0.299 R + 0.587 G + 0.114 B, scaled to [0, 1]; result is [H, W, 1].
TensorF to_grayscale(const Image8& image);
/// Bilinear resize to `target_height` rows with the width scaled by the same factor
/// (rounded, at least 1). Sampling uses pixel centres; an unchanged height copies.
TensorF resize_to_height(const TensorF& image, Index target_height);
/// read_image -> to_grayscale -> resize_to_height.
TensorF load_and_preprocess(const std::filesystem::path& path, Index target_height);
/// Maps [lo, hi] linearly onto 0..255 (clamped) as a gray image.
Image8 to_image8(const TensorF& image, float lo = 0.0f, float hi = 1.0f);

}  // namespace gfcn
