#pragma once

#include <cstdint>
#include <vector>

#include "cvs/tensor.hpp"

namespace cvs {

/// H x W x C image with values in [0, 1], stored interleaved (HWC).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  bool operator==(const Image&) const = default;
};

/// H x W class map; 0 is background, foreground values lie in 1..num_classes.
struct SegMask {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<std::uint8_t> values;

  SegMask() = default;
  SegMask(int h, int w, int p, std::uint8_t fill = 0)
      : height(h), width(w), num_classes(p), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

  /// Throws ValidationError when a value exceeds num_classes or the size is inconsistent.
  void validate() const;

  bool operator==(const SegMask&) const = default;
};

/// Largest class count representable by 8-bit masks.
inline constexpr int kMaxClasses = 255;

/// Copies a batch of images into an N x C x H x W tensor.
template <typename T>
Tensor<T> to_batch(const std::vector<const Image*>& images);

/// Bilinear resize (half-pixel centers).
Image resize_bilinear(const Image& image, int height, int width);

/// Nearest-neighbour resize, so class ids are preserved.
SegMask resize_nearest(const SegMask& mask, int height, int width);

/// Repeats a single-channel image across `channels` channels.
Image replicate_channels(const Image& image, int channels);

}  // namespace cvs
