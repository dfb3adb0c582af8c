#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "motir/imaging.hpp"
#include "motir/rng.hpp"

namespace motir {

/// Seeded procedural "clean" image: a colour gradient, a few soft discs and a
/// low-frequency ripple. Stands in for HQ photographs in self-contained runs.
inline Image procedural_image(CounterRng& rng, int height, int width) {
  auto colour = [&] {
    return std::array<double, 3>{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
  };
  const auto c0 = colour(), c1 = colour();
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(angle), gy = std::sin(angle);

  struct Disc {
    double cx, cy, radius, softness;
    std::array<double, 3> rgb;
  };
  const int n_discs = 2 + static_cast<int>(rng.below(3));
  std::array<Disc, 4> discs{};
  for (int i = 0; i < n_discs; ++i)
    discs[i] = {rng.uniform(0.0, width), rng.uniform(0.0, height), rng.uniform(0.15, 0.35) * std::min(height, width),
                rng.uniform(0.5, 2.5), colour()};

  const double fx = rng.uniform(1.0, 3.0) * 2.0 * std::numbers::pi / width;
  const double fy = rng.uniform(1.0, 3.0) * 2.0 * std::numbers::pi / height;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ripple = rng.uniform(0.03, 0.12);

  Image img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = 0.5 + 0.5 * ((x / double(width) - 0.5) * gx + (y / double(height) - 0.5) * gy) * 1.4;
      std::array<double, 3> px{};
      for (int c = 0; c < 3; ++c) px[c] = (1.0 - u) * c0[c] + u * c1[c];
      for (int i = 0; i < n_discs; ++i) {
        const auto& d = discs[i];
        const double dist = std::hypot(x + 0.5 - d.cx, y + 0.5 - d.cy);
        const double a = 1.0 / (1.0 + std::exp((dist - d.radius) / d.softness));
        for (int c = 0; c < 3; ++c) px[c] = (1.0 - a) * px[c] + a * d.rgb[c];
      }
      const double r = ripple * std::sin(fx * x + fy * y + phase);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(std::clamp(px[c] + r, 0.0, 1.0));
    }
  return img;
}

}  // namespace motir
