#include "cvs/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include <png.h>
#include <zlib.h>

#include "cvs/error.hpp"

namespace cvs {

namespace {

struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw LoadError("cannot open '" + path.string() + "'");
  return f;
}

RawImage read_png_raw(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("libpng initialisation failed");
  }
  RawImage raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.bytes.resize(static_cast<std::size_t>(raw.width) * raw.height * raw.channels);
  std::vector<png_bytep> rows(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + static_cast<std::size_t>(y) * raw.width * raw.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

RawImage read_pnm_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw LoadError("unsupported PNM variant in '" + path.string() + "'");
  auto next_int = [&]() {
    int v = 0;
    while (in >> std::ws && in.peek() == '#') in.ignore(1 << 20, '\n');
    in >> v;
    return v;
  };
  RawImage raw;
  raw.width = next_int();
  raw.height = next_int();
  const int maxval = next_int();
  in.get();
  if (raw.width < 1 || raw.height < 1 || maxval != 255) throw LoadError("unsupported PNM header in '" + path.string() + "'");
  raw.channels = magic == "P5" ? 1 : 3;
  raw.bytes.resize(static_cast<std::size_t>(raw.width) * raw.height * raw.channels);
  in.read(reinterpret_cast<char*>(raw.bytes.data()), static_cast<std::streamsize>(raw.bytes.size()));
  if (!in) throw LoadError("truncated PNM '" + path.string() + "'");
  return raw;
}

RawImage read_raw(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw LoadError("image '" + path.string() + "' does not exist");
  const auto ext = path.extension().string();
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return read_pnm_raw(path);
  return read_png_raw(path);
}

void write_png_raw(const std::filesystem::path& path, int height, int width, int channels,
                   const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed to write PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, width, height, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const RawImage raw = read_raw(path);
  Image img(raw.height, raw.width, raw.channels);
  std::transform(raw.bytes.begin(), raw.bytes.end(), img.pixels.begin(),
                 [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ShapeError("PNG export supports 1 or 3 channels");
  std::vector<std::uint8_t> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  write_png_raw(path, image.height, image.width, image.channels, bytes);
}

SegMask read_mask(const std::filesystem::path& path, int num_classes) {
  const RawImage raw = read_raw(path);
  if (raw.channels != 1) throw ValidationError("mask '" + path.string() + "' must be single-channel");
  SegMask mask(raw.height, raw.width, num_classes);
  mask.values = raw.bytes;
  try {
    mask.validate();
  } catch (const ValidationError& e) {
    throw ValidationError("mask '" + path.string() + "': " + e.what());
  }
  return mask;
}

void write_mask(const std::filesystem::path& path, const SegMask& mask) {
  mask.validate();
  write_png_raw(path, mask.height, mask.width, 1, mask.values);
}

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw LoadError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 16);
  int n = 0;
  while ((n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0) out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw LoadError("corrupt data in '" + path.string() + "'");
  return out;
}

}  // namespace cvs
