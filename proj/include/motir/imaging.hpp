#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "motir/error.hpp"

namespace motir {

/// HxWx3 interleaved RGB grid with values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f)
      : height_(height), width_(width), pixels_(checked_size(height, width), fill) {}

  static Image from_pixels(int height, int width, std::vector<float> pixels) {
    Image img;
    require(pixels.size() == checked_size(height, width), ErrorKind::ShapeMismatch,
            "pixel buffer has " + std::to_string(pixels.size()) + " values, expected " +
                std::to_string(checked_size(height, width)));
    img.height_ = height;
    img.width_ = width;
    img.pixels_ = std::move(pixels);
    img.validate();
    return img;
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  float& at(int y, int x, int c) noexcept { return pixels_[index(y, x, c)]; }
  float at(int y, int x, int c) const noexcept { return pixels_[index(y, x, c)]; }

  std::span<float> data() noexcept { return pixels_; }
  std::span<const float> data() const noexcept { return pixels_; }

  /// Throws unless every value is finite and inside [0, 1].
  void validate() const {
    for (float v : pixels_) {
      require(std::isfinite(v), ErrorKind::NonFinite, "image contains a non-finite pixel");
      require(v >= 0.0f && v <= 1.0f, ErrorKind::OutOfRange,
              "image pixel " + std::to_string(v) + " outside [0,1]");
    }
  }

  void clamp01() noexcept {
    for (float& v : pixels_) v = std::clamp(v, 0.0f, 1.0f);
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  static std::size_t checked_size(int h, int w) {
    require(h > 0 && w > 0, ErrorKind::InvalidArgument,
            "image dimensions must be positive, got " + std::to_string(h) + "x" + std::to_string(w));
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3;
  }
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3 +
           static_cast<std::size_t>(c);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// Single-channel real grid (luma planes, masks).
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
};

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

/// Full-range BT.601 luma.
inline Plane rgb_to_y(const Image& img) {
  Plane y{img.height(), img.width(), std::vector<double>(static_cast<std::size_t>(img.height()) * img.width())};
  const auto px = img.data();
  for (std::size_t i = 0; i < y.values.size(); ++i) {
    const double r = px[3 * i], g = px[3 * i + 1], b = px[3 * i + 2];
    require(std::isfinite(r) && std::isfinite(g) && std::isfinite(b), ErrorKind::NonFinite,
            "rgb_to_y: non-finite pixel");
    y.values[i] = kLumaR * r + kLumaG * g + kLumaB * b;
  }
  return y;
}

/// Grid of patch tokens. Each token is a P*P*3 vector laid out (row, col, channel).
struct LatentGrid {
  int rows = 0;
  int cols = 0;
  int patch = 0;
  std::vector<double> values;

  int token_count() const noexcept { return rows * cols; }
  int token_dim() const noexcept { return 3 * patch * patch; }

  std::span<double> token(int i) noexcept {
    return {values.data() + static_cast<std::size_t>(i) * token_dim(), static_cast<std::size_t>(token_dim())};
  }
  std::span<const double> token(int i) const noexcept {
    return {values.data() + static_cast<std::size_t>(i) * token_dim(), static_cast<std::size_t>(token_dim())};
  }

  friend bool operator==(const LatentGrid&, const LatentGrid&) = default;
};

inline void check_patchable(int height, int width, int patch) {
  require(patch > 0, ErrorKind::InvalidArgument, "patch size must be positive");
  require(height % patch == 0, ErrorKind::ShapeMismatch,
          "image height " + std::to_string(height) + " not divisible by patch size " + std::to_string(patch));
  require(width % patch == 0, ErrorKind::ShapeMismatch,
          "image width " + std::to_string(width) + " not divisible by patch size " + std::to_string(patch));
}

/// Patchify and map [0,1] -> [-1,1]. Computed in double from float pixels, so the
/// inverse is exact for every pixel that is zero or at least 2^-31.
inline LatentGrid encode(const Image& img, int patch) {
  check_patchable(img.height(), img.width(), patch);
  LatentGrid lat{img.height() / patch, img.width() / patch, patch, {}};
  lat.values.resize(static_cast<std::size_t>(lat.token_count()) * lat.token_dim());
  for (int r = 0; r < lat.rows; ++r) {
    for (int c = 0; c < lat.cols; ++c) {
      auto tok = lat.token(r * lat.cols + c);
      std::size_t k = 0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int ch = 0; ch < 3; ++ch)
            tok[k++] = 2.0 * static_cast<double>(img.at(r * patch + py, c * patch + px, ch)) - 1.0;
    }
  }
  return lat;
}

/// Inverse of encode. With clamp set, out-of-range values (from sampling) are
/// clipped to [0,1]; without it they are rejected.
inline Image decode(const LatentGrid& lat, bool clamp = false) {
  require(lat.patch > 0 && lat.rows > 0 && lat.cols > 0, ErrorKind::InvalidArgument, "malformed latent grid");
  require(lat.values.size() == static_cast<std::size_t>(lat.token_count()) * lat.token_dim(),
          ErrorKind::ShapeMismatch,
          "latent grid holds " + std::to_string(lat.values.size()) + " values, expected " +
              std::to_string(lat.token_count()) + " tokens of length " + std::to_string(lat.token_dim()));
  Image img(lat.rows * lat.patch, lat.cols * lat.patch);
  for (int r = 0; r < lat.rows; ++r) {
    for (int c = 0; c < lat.cols; ++c) {
      auto tok = lat.token(r * lat.cols + c);
      std::size_t k = 0;
      for (int py = 0; py < lat.patch; ++py)
        for (int px = 0; px < lat.patch; ++px)
          for (int ch = 0; ch < 3; ++ch) {
            const double z = tok[k++];
            require(std::isfinite(z), ErrorKind::NonFinite, "latent value is not finite");
            double v = (z + 1.0) / 2.0;
            if (clamp) {
              v = std::clamp(v, 0.0, 1.0);
            } else {
              require(v >= 0.0 && v <= 1.0, ErrorKind::OutOfRange,
                      "latent value " + std::to_string(z) + " decodes outside [0,1]");
            }
            img.at(r * lat.patch + py, c * lat.patch + px, ch) = static_cast<float>(v);
          }
    }
  }
  return img;
}

/// Builds a grid from raw token vectors (row-major over the grid).
inline LatentGrid make_latent_grid(int rows, int cols, int patch, std::vector<double> values) {
  LatentGrid lat{rows, cols, patch, std::move(values)};
  require(lat.values.size() == static_cast<std::size_t>(rows) * cols * 3 * patch * patch, ErrorKind::ShapeMismatch,
          "token vector length inconsistent with patch size " + std::to_string(patch));
  return lat;
}

}  // namespace motir
