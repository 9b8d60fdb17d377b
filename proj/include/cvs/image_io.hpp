#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cvs/image.hpp"

namespace cvs {

/// Reads an 8-bit PNG (gray, gray+alpha, RGB, RGBA) or binary PGM/PPM into [0,1] floats.
/// Alpha is dropped.
Image read_image(const std::filesystem::path& path);

/// Writes an image as an 8-bit PNG (values clamped to [0,1], scaled by 255).
void write_png(const std::filesystem::path& path, const Image& image);

/// Reads a single-channel 8-bit image whose pixel values are class ids.
SegMask read_mask(const std::filesystem::path& path, int num_classes);

/// Writes a mask as a single-channel 8-bit PNG with pixel value = class id.
void write_mask(const std::filesystem::path& path, const SegMask& mask);

/// Reads a whole file, transparently inflating gzip data.
std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path);

}  // namespace cvs
