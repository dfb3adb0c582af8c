#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "motir/error.hpp"
#include "motir/imaging.hpp"

namespace motir {

/// Returned by psnr_y for identical inputs.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

inline void check_same_shape(const Image& a, const Image& b) {
  require(a.height() == b.height() && a.width() == b.width(), ErrorKind::ShapeMismatch,
          "image shapes differ: " + std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
              std::to_string(b.height()) + "x" + std::to_string(b.width()));
}

/// PSNR on full-range BT.601 luma, scaled to 0-255.
inline double psnr_y(const Image& a, const Image& b) {
  check_same_shape(a, b);
  const Plane ya = rgb_to_y(a), yb = rgb_to_y(b);
  double sse = 0.0;
  for (std::size_t i = 0; i < ya.values.size(); ++i) {
    const double d = 255.0 * (ya.values[i] - yb.values[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(ya.values.size());
  if (mse == 0.0) return kPsnrInfinity;
  return 20.0 * std::log10(255.0 / std::sqrt(mse));
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

namespace detail {

/// 'valid' 2-D correlation with a separable normalized Gaussian.
inline Plane gaussian_filter_valid(const Plane& in, int window, double sigma) {
  std::vector<double> k(window);
  const double c = (window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) sum += k[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
  for (double& v : k) v /= sum;
  const int oh = in.height - window + 1, ow = in.width - window + 1;
  Plane rows{in.height, ow, std::vector<double>(static_cast<std::size_t>(in.height) * ow)};
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < window; ++i) acc += k[i] * in.at(y, x + i);
      rows.at(y, x) = acc;
    }
  Plane out{oh, ow, std::vector<double>(static_cast<std::size_t>(oh) * ow)};
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < window; ++i) acc += k[i] * rows.at(y + i, x);
      out.at(y, x) = acc;
    }
  return out;
}

inline Plane elementwise(const Plane& a, const Plane& b) {
  Plane out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = a.values[i] * b.values[i];
  return out;
}

}  // namespace detail

/// Mean SSIM over luma with an 11x11 Gaussian window (valid region only).
inline double ssim_y(const Image& a, const Image& b, const SsimOptions& opt = {}) {
  check_same_shape(a, b);
  require(a.height() >= opt.window && a.width() >= opt.window, ErrorKind::ShapeMismatch,
          "image " + std::to_string(a.height()) + "x" + std::to_string(a.width()) + " smaller than SSIM window " +
              std::to_string(opt.window));
  Plane x = rgb_to_y(a), y = rgb_to_y(b);
  for (double& v : x.values) v *= opt.dynamic_range;
  for (double& v : y.values) v *= opt.dynamic_range;
  const double c1 = (opt.k1 * opt.dynamic_range) * (opt.k1 * opt.dynamic_range);
  const double c2 = (opt.k2 * opt.dynamic_range) * (opt.k2 * opt.dynamic_range);
  using detail::gaussian_filter_valid;
  const Plane mx = gaussian_filter_valid(x, opt.window, opt.sigma);
  const Plane my = gaussian_filter_valid(y, opt.window, opt.sigma);
  const Plane exx = gaussian_filter_valid(detail::elementwise(x, x), opt.window, opt.sigma);
  const Plane eyy = gaussian_filter_valid(detail::elementwise(y, y), opt.window, opt.sigma);
  const Plane exy = gaussian_filter_valid(detail::elementwise(x, y), opt.window, opt.sigma);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.values.size(); ++i) {
    const double ux = mx.values[i], uy = my.values[i];
    const double vx = exx.values[i] - ux * ux;
    const double vy = eyy.values[i] - uy * uy;
    const double cxy = exy.values[i] - ux * uy;
    const double num = (2.0 * ux * uy + c1) * (2.0 * cxy + c2);
    const double den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
    total += num / den;
  }
  return total / static_cast<double>(mx.values.size());
}

struct Correlations {
  double plcc = 0.0;
  double srcc = 0.0;
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorKind::ShapeMismatch, "correlation inputs differ in length");
  require(a.size() >= 2, ErrorKind::InvalidArgument, "correlation needs at least 2 pairs");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(std::isfinite(a[i]) && std::isfinite(b[i]), ErrorKind::NonFinite, "correlation input not finite");
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  require(saa > 0.0 && sbb > 0.0, ErrorKind::InvalidArgument, "correlation undefined for a constant sequence");
  return sab / std::sqrt(saa * sbb);
}

/// 1-based ranks; ties receive their mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Raw Pearson (no logistic remap) and Spearman on averaged ranks.
inline Correlations correlations(const std::vector<double>& predicted, const std::vector<double>& ground_truth) {
  return {pearson(predicted, ground_truth), pearson(average_ranks(predicted), average_ranks(ground_truth))};
}

/// First decimal number in the text, if any.
inline std::optional<double> parse_score(const std::string& text) {
  static const std::regex number(R"([-+]?[0-9]+(\.[0-9]+)?)");
  std::smatch m;
  if (!std::regex_search(text, m, number)) return std::nullopt;
  try {
    return std::stod(m.str());
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace motir
