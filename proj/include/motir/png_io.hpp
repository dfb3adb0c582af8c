#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "motir/error.hpp"
#include "motir/imaging.hpp"

namespace motir {

/// 8-bit PNG <-> Image. Reading divides by 255; writing rounds to nearest.
inline Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    fail(ErrorKind::Io, "cannot read PNG " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&png);
    fail(ErrorKind::Format, "cannot decode PNG " + path.string() + ": " + png.message);
  }
  std::vector<float> px(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) px[i] = static_cast<float>(buf[i]) / 255.0f;
  return Image::from_pixels(static_cast<int>(png.height), static_cast<int>(png.width), std::move(px));
}

inline std::uint8_t to_byte(float v) {
  const float c = std::fmin(std::fmax(v, 0.0f), 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> buf(img.data().size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(img.data()[i]);
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buf.data(), 0, nullptr))
    fail(ErrorKind::Io, "cannot write PNG " + path.string() + ": " + png.message);
}

/// Quantizes an image to the 8-bit grid it would have after a PNG round trip.
inline Image quantize8(const Image& img) {
  Image out = img;
  for (float& v : out.data()) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

}  // namespace motir
