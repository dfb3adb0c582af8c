#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "motir/error.hpp"
#include "motir/imaging.hpp"
#include "motir/rng.hpp"

namespace motir {

enum class DegradationKind { Blur, Noise, Jpeg, LowLight, Haze, Rain };

inline constexpr std::array<DegradationKind, 6> kAllDegradations = {
    DegradationKind::Blur,     DegradationKind::Noise, DegradationKind::Jpeg,
    DegradationKind::LowLight, DegradationKind::Haze,  DegradationKind::Rain};

inline std::string_view to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::Blur: return "blur";
    case DegradationKind::Noise: return "noise";
    case DegradationKind::Jpeg: return "jpeg";
    case DegradationKind::LowLight: return "lowlight";
    case DegradationKind::Haze: return "haze";
    case DegradationKind::Rain: return "rain";
  }
  return "?";
}

inline DegradationKind parse_degradation_kind(std::string_view name) {
  for (auto k : kAllDegradations)
    if (to_string(k) == name) return k;
  fail(ErrorKind::InvalidArgument, "unknown degradation kind '" + std::string(name) + "'");
}

struct ParamRange {
  std::string_view name;
  double lo;
  double hi;
  double fallback;
};

/// Parameter schema per kind. Ranges are the accepted domain, not the synthesis ranges.
///   blur:     sigma (px) of the Gaussian kernel
///   noise:    sigma of additive Gaussian noise, in [0,1] pixel units
///   jpeg:     quality factor of the block-DCT quantizer
///   lowlight: out = gain * in^gamma
///   haze:     out = in * transmission + airlight * (1 - transmission)
///   rain:     density (streaks per 16 px), streak length (px), angle from vertical (deg), blend intensity
inline std::vector<ParamRange> param_schema(DegradationKind k) {
  switch (k) {
    case DegradationKind::Blur: return {{"sigma", 0.0, 3.0, 1.0}};
    case DegradationKind::Noise: return {{"sigma", 0.0, 0.2, 0.05}};
    case DegradationKind::Jpeg: return {{"quality", 10.0, 100.0, 50.0}};
    case DegradationKind::LowLight: return {{"gamma", 1.0, 3.0, 2.0}, {"gain", 0.2, 1.0, 0.5}};
    case DegradationKind::Haze: return {{"transmission", 0.0, 1.0, 0.6}, {"airlight", 0.0, 1.0, 0.9}};
    case DegradationKind::Rain:
      return {{"density", 0.0, 1.0, 0.3}, {"length", 1.0, 16.0, 8.0}, {"angle", -60.0, 60.0, 15.0},
              {"intensity", 0.0, 1.0, 0.6}};
  }
  return {};
}

struct DegradationSpec {
  DegradationKind kind = DegradationKind::Blur;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;

  /// Named parameter, or the schema fallback when absent.
  double param(std::string_view name) const {
    if (auto it = params.find(std::string(name)); it != params.end()) return it->second;
    for (const auto& r : param_schema(kind))
      if (r.name == name) return r.fallback;
    fail(ErrorKind::InvalidArgument, "degradation '" + std::string(to_string(kind)) + "' has no parameter '" +
                                         std::string(name) + "'");
  }

  void validate() const {
    const auto schema = param_schema(kind);
    for (const auto& [name, value] : params) {
      auto it = std::find_if(schema.begin(), schema.end(), [&](const ParamRange& r) { return r.name == name; });
      require(it != schema.end(), ErrorKind::InvalidArgument,
              "degradation '" + std::string(to_string(kind)) + "' has no parameter '" + name + "'");
      require(std::isfinite(value) && value >= it->lo && value <= it->hi, ErrorKind::OutOfRange,
              "parameter '" + name + "' = " + std::to_string(value) + " outside [" + std::to_string(it->lo) + ", " +
                  std::to_string(it->hi) + "]");
    }
  }

  friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

struct PipelineSpec {
  std::vector<DegradationSpec> stages;
  int downsample_factor = 1;
};

/// Normalized severity in [0,1]; monotone non-decreasing in every "worse" direction.
inline double severity(const DegradationSpec& s) {
  s.validate();
  switch (s.kind) {
    case DegradationKind::Blur: return s.param("sigma") / 3.0;
    case DegradationKind::Noise: return s.param("sigma") / 0.2;
    case DegradationKind::Jpeg: return (100.0 - s.param("quality")) / 90.0;
    case DegradationKind::LowLight:
      // 1 - response at mid grey relative to the identity response.
      return 1.0 - s.param("gain") * std::pow(0.5, s.param("gamma") - 1.0);
    case DegradationKind::Haze: return 1.0 - s.param("transmission");
    case DegradationKind::Rain: return s.param("density") * s.param("intensity");
  }
  return 0.0;
}

/// Severity of a sequence: 1 - prod(1 - s_i).
inline double severity(const std::vector<DegradationSpec>& specs) {
  double keep = 1.0;
  for (const auto& s : specs) keep *= 1.0 - severity(s);
  return std::clamp(1.0 - keep, 0.0, 1.0);
}

namespace detail {

inline int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur over `channels` interleaved planes, reflect-101 borders.
inline void blur_planar(std::vector<double>& buf, int h, int w, int channels, double sigma) {
  if (sigma <= 0.0) return;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(buf.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * buf[(static_cast<std::size_t>(y) * w + reflect(x + i, w)) * channels + c];
        tmp[(static_cast<std::size_t>(y) * w + x) * channels + c] = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[(static_cast<std::size_t>(reflect(y + i, h)) * w + x) * channels + c];
        buf[(static_cast<std::size_t>(y) * w + x) * channels + c] = acc;
      }
}

inline Image from_buffer(const std::vector<double>& buf, int h, int w) {
  Image out(h, w);
  auto px = out.data();
  for (std::size_t i = 0; i < buf.size(); ++i) px[i] = static_cast<float>(std::clamp(buf[i], 0.0, 1.0));
  return out;
}

inline std::vector<double> to_buffer(const Image& img) {
  return {img.data().begin(), img.data().end()};
}

inline Image apply_blur(const Image& img, double sigma) {
  if (sigma == 0.0) return img;
  auto buf = to_buffer(img);
  blur_planar(buf, img.height(), img.width(), 3, sigma);
  return from_buffer(buf, img.height(), img.width());
}

inline Image apply_noise(const Image& img, double sigma, std::uint64_t seed) {
  if (sigma == 0.0) return img;
  CounterRng rng(seed);
  Image out = img;
  for (float& v : out.data()) v = static_cast<float>(std::clamp(static_cast<double>(v) + sigma * rng.normal(), 0.0, 1.0));
  return out;
}

// Standard luminance quantization table (ITU T.81 Annex K).
inline constexpr std::array<int, 64> kJpegLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline std::array<int, 64> jpeg_table(double quality) {
  const int q = static_cast<int>(std::lround(quality));
  const int scale = q < 50 ? 5000 / q : 200 - 2 * q;
  std::array<int, 64> t{};
  for (int i = 0; i < 64; ++i) t[i] = std::clamp((kJpegLuma[i] * scale + 50) / 100, 1, 255);
  return t;
}

inline Image apply_jpeg(const Image& img, double quality) {
  const auto table = jpeg_table(quality);
  std::array<std::array<double, 8>, 8> basis{};
  for (int u = 0; u < 8; ++u)
    for (int x = 0; x < 8; ++x)
      basis[u][x] = (u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) *
                    std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
  const int h = img.height(), w = img.width();
  Image out = img;
  for (int by = 0; by < h; by += 8)
    for (int bx = 0; bx < w; bx += 8)
      for (int c = 0; c < 3; ++c) {
        double block[8][8], coef[8][8], tmp[8][8];
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            block[y][x] = 255.0 * img.at(std::min(by + y, h - 1), std::min(bx + x, w - 1), c) - 128.0;
        for (int u = 0; u < 8; ++u)
          for (int x = 0; x < 8; ++x) {
            double a = 0;
            for (int y = 0; y < 8; ++y) a += basis[u][y] * block[y][x];
            tmp[u][x] = a;
          }
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v) {
            double a = 0;
            for (int x = 0; x < 8; ++x) a += basis[v][x] * tmp[u][x];
            const double step = table[u * 8 + v];
            coef[u][v] = std::round(a / step) * step;
          }
        for (int y = 0; y < 8; ++y)
          for (int v = 0; v < 8; ++v) {
            double a = 0;
            for (int u = 0; u < 8; ++u) a += basis[u][y] * coef[u][v];
            tmp[y][v] = a;
          }
        for (int y = 0; y < 8 && by + y < h; ++y)
          for (int x = 0; x < 8 && bx + x < w; ++x) {
            double a = 0;
            for (int v = 0; v < 8; ++v) a += basis[v][x] * tmp[y][v];
            out.at(by + y, bx + x, c) = static_cast<float>(std::clamp((a + 128.0) / 255.0, 0.0, 1.0));
          }
      }
  return out;
}

inline Image apply_lowlight(const Image& img, double gamma, double gain) {
  Image out = img;
  for (float& v : out.data()) v = static_cast<float>(std::clamp(gain * std::pow(static_cast<double>(v), gamma), 0.0, 1.0));
  return out;
}

inline Image apply_haze(const Image& img, double transmission, double airlight) {
  Image out = img;
  for (float& v : out.data())
    v = static_cast<float>(std::clamp(v * transmission + airlight * (1.0 - transmission), 0.0, 1.0));
  return out;
}

inline Image apply_rain(const Image& img, const DegradationSpec& s) {
  const int h = img.height(), w = img.width();
  const auto streaks = static_cast<int>(std::lround(s.param("density") * h * w / 16.0));
  if (streaks == 0 || s.param("intensity") == 0.0) return img;
  const double len = s.param("length");
  const double theta = s.param("angle") * std::numbers::pi / 180.0;
  const double dx = std::sin(theta), dy = std::cos(theta);
  CounterRng rng(s.seed);
  std::vector<double> mask(static_cast<std::size_t>(h) * w, 0.0);
  for (int n = 0; n < streaks; ++n) {
    const double x0 = rng.uniform(0.0, w), y0 = rng.uniform(0.0, h);
    for (double d = 0.0; d <= len; d += 0.5) {
      const auto x = static_cast<int>(std::floor(x0 + d * dx));
      const auto y = static_cast<int>(std::floor(y0 + d * dy));
      if (x >= 0 && x < w && y >= 0 && y < h) mask[static_cast<std::size_t>(y) * w + x] = 1.0;
    }
  }
  blur_planar(mask, h, w, 1, 0.5);
  Image out = img;
  const double intensity = s.param("intensity");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = std::min(1.0, intensity * mask[static_cast<std::size_t>(y) * w + x]);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = static_cast<float>(std::clamp(out.at(y, x, c) * (1.0 - a) + a, 0.0, 1.0));
    }
  return out;
}

}  // namespace detail

inline Image apply_degradation(const Image& img, const DegradationSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DegradationKind::Blur: return detail::apply_blur(img, spec.param("sigma"));
    case DegradationKind::Noise: return detail::apply_noise(img, spec.param("sigma"), spec.seed);
    case DegradationKind::Jpeg: return detail::apply_jpeg(img, spec.param("quality"));
    case DegradationKind::LowLight: return detail::apply_lowlight(img, spec.param("gamma"), spec.param("gain"));
    case DegradationKind::Haze: return detail::apply_haze(img, spec.param("transmission"), spec.param("airlight"));
    case DegradationKind::Rain: return detail::apply_rain(img, spec);
  }
  fail(ErrorKind::InvalidArgument, "unknown degradation kind");
}

/// Left-to-right application.
inline Image compose(const Image& img, const std::vector<DegradationSpec>& specs) {
  require(!specs.empty(), ErrorKind::InvalidArgument, "compose needs at least one degradation");
  Image out = img;
  for (const auto& s : specs) out = apply_degradation(out, s);
  return out;
}

/// Area-average downsampling by an integer factor.
inline Image downsample(const Image& img, int factor) {
  require(factor >= 1, ErrorKind::InvalidArgument, "downsample factor must be >= 1");
  require(img.height() % factor == 0 && img.width() % factor == 0, ErrorKind::ShapeMismatch,
          "image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
              " not divisible by downsample factor " + std::to_string(factor));
  if (factor == 1) return img;
  Image out(img.height() / factor, img.width() / factor);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = 0; i < factor; ++i)
          for (int j = 0; j < factor; ++j) acc += img.at(y * factor + i, x * factor + j, c);
        out.at(y, x, c) = static_cast<float>(acc * inv);
      }
  return out;
}

/// Stages in order, then area downsampling. `patch` (if nonzero) is checked against the output size.
inline Image high_order(const Image& img, const PipelineSpec& pipe, int patch = 0) {
  require(pipe.downsample_factor >= 1, ErrorKind::InvalidArgument, "downsample factor must be >= 1");
  require(img.height() % pipe.downsample_factor == 0 && img.width() % pipe.downsample_factor == 0,
          ErrorKind::ShapeMismatch,
          "image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
              " not divisible by downsample factor " + std::to_string(pipe.downsample_factor));
  if (patch > 0)
    check_patchable(img.height() / pipe.downsample_factor, img.width() / pipe.downsample_factor, patch);
  Image out = img;
  for (const auto& s : pipe.stages) out = apply_degradation(out, s);
  return downsample(out, pipe.downsample_factor);
}

/// Per-parameter sampling ranges used when synthesizing data. Defaults are
/// chosen inside the accepted schema and are assumptions, not measured values.
struct SynthesisRanges {
  std::map<DegradationKind, std::map<std::string, std::pair<double, double>>> ranges = {
      {DegradationKind::Blur, {{"sigma", {0.5, 2.5}}}},
      {DegradationKind::Noise, {{"sigma", {0.02, 0.15}}}},
      {DegradationKind::Jpeg, {{"quality", {15.0, 60.0}}}},
      {DegradationKind::LowLight, {{"gamma", {1.5, 2.5}}, {"gain", {0.3, 0.7}}}},
      {DegradationKind::Haze, {{"transmission", {0.4, 0.8}}, {"airlight", {0.7, 1.0}}}},
      {DegradationKind::Rain, {{"density", {0.1, 0.5}}, {"length", {4.0, 12.0}}, {"angle", {-30.0, 30.0}},
                               {"intensity", {0.3, 0.8}}}},
  };

  DegradationSpec sample(DegradationKind kind, CounterRng& rng, std::uint64_t seed) const {
    DegradationSpec spec{kind, {}, seed};
    for (const auto& [name, lohi] : ranges.at(kind)) {
      double v = rng.uniform(lohi.first, lohi.second);
      if (kind == DegradationKind::Jpeg) v = std::round(v);
      // Two decimals keeps manifests short and replayable from text.
      else v = std::round(v * 100.0) / 100.0;
      spec.params[name] = v;
    }
    spec.validate();
    return spec;
  }
};

/// `rounds` rounds of blur -> noise -> jpeg with sampled parameters.
/// Stage seeds are derive_seed(dataset_seed, sample_index, stage_index).
inline PipelineSpec make_high_order_pipeline(const SynthesisRanges& ranges, CounterRng& rng,
                                             std::uint64_t dataset_seed, std::uint64_t sample_index, int rounds = 2,
                                             int downsample_factor = 1) {
  PipelineSpec pipe;
  pipe.downsample_factor = downsample_factor;
  std::uint64_t stage = 0;
  for (int r = 0; r < rounds; ++r)
    for (auto kind : {DegradationKind::Blur, DegradationKind::Noise, DegradationKind::Jpeg}) {
      pipe.stages.push_back(ranges.sample(kind, rng, derive_seed(dataset_seed, sample_index, stage)));
      ++stage;
    }
  return pipe;
}

}  // namespace motir
