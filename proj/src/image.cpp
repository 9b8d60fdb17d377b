#include "cvs/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cvs/error.hpp"

namespace cvs {

void SegMask::validate() const {
  if (height < 1 || width < 1) throw ValidationError("mask has empty spatial shape");
  if (values.size() != static_cast<std::size_t>(height) * width)
    throw ValidationError("mask storage does not match " + std::to_string(height) + "x" + std::to_string(width));
  if (num_classes < 1 || num_classes > kMaxClasses)
    throw ValidationError("mask class count must be in 1.." + std::to_string(kMaxClasses));
  for (auto v : values)
    if (v > num_classes)
      throw ValidationError("mask value " + std::to_string(v) + " exceeds class count " + std::to_string(num_classes));
}

template <typename T>
Tensor<T> to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("empty image batch");
  const int h = images.front()->height;
  const int w = images.front()->width;
  const int c = images.front()->channels;
  Tensor<T> out({static_cast<int>(images.size()), c, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height != h || img.width != w || img.channels != c)
      throw ShapeError("image " + std::to_string(n) + " does not match the batch shape");
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(static_cast<int>(n), ch, y, x) = static_cast<T>(img.at(y, x, ch));
  }
  return out;
}

template Tensor<float> to_batch<float>(const std::vector<const Image*>&);
template Tensor<double> to_batch<double>(const std::vector<const Image*>&);

Image resize_bilinear(const Image& image, int height, int width) {
  if (height == image.height && width == image.width) return image;
  Image out(height, width, image.channels);
  const double sy = double(image.height) / height;
  const double sx = double(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), image.height - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), image.width - 1);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < image.channels; ++c) {
        const float top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const float bot = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

SegMask resize_nearest(const SegMask& mask, int height, int width) {
  if (height == mask.height && width == mask.width) return mask;
  SegMask out(height, width, mask.num_classes);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(static_cast<int>(std::floor((y + 0.5) * mask.height / height)), mask.height - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(static_cast<int>(std::floor((x + 0.5) * mask.width / width)), mask.width - 1);
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

Image replicate_channels(const Image& image, int channels) {
  if (image.channels == channels) return image;
  if (image.channels != 1) throw ShapeError("only single-channel images can be replicated");
  Image out(image.height, image.width, channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < channels; ++c) out.at(y, x, c) = image.at(y, x, 0);
  return out;
}

}  // namespace cvs
