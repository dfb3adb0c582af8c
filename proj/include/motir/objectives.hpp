#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "motir/error.hpp"
#include "motir/model.hpp"
#include "motir/rng.hpp"
#include "motir/stream.hpp"

namespace motir {

struct LossConfig {
  double lambda = 0.25;  // AR weight in the combined loss
  double drop_text = 0.1;
  double drop_vit = 0.1;
  double drop_cleanvae = 0.1;
  double shift = 4.0;  // timestep shift

  void validate() const {
    require(lambda >= 0.0, ErrorKind::InvalidArgument, "lambda must be >= 0");
    for (double p : {drop_text, drop_vit, drop_cleanvae})
      require(p >= 0.0 && p <= 1.0, ErrorKind::InvalidArgument, "dropout probabilities must lie in [0,1]");
    require(shift >= 1.0, ErrorKind::InvalidArgument, "timestep shift must be >= 1");
  }
};

enum class LossMode { RfOnly, Combined };

// ---------------------------------------------------------------------------
// Autoregressive term

/// (logit row, target id) pairs: every response text token after the first is
/// predicted from the response position before it, so condition logits never enter.
inline std::vector<std::pair<int, int>> ar_targets(const TokenStream& s, const std::vector<int>& text_rows) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t k = 0; k + 1 < text_rows.size(); ++k) {
    const int i = text_rows[k], j = text_rows[k + 1];
    if (j != i + 1 || s.tokens[i].is_condition || s.tokens[j].is_condition) continue;
    out.emplace_back(static_cast<int>(k), s.tokens[j].id);
  }
  return out;
}

/// Mean next-token negative log-likelihood over the response text. When
/// `dlogits` is given, `weight * d(loss)/d(logits)` is added to it.
template <typename T>
double ar_loss(const Mat<T>& logits, const std::vector<int>& text_rows, const TokenStream& s,
               Mat<T>* dlogits = nullptr, double weight = 1.0) {
  const auto targets = ar_targets(s, text_rows);
  require(!targets.empty(), ErrorKind::InvalidArgument, "ar_loss: stream has no response text to predict");
  const double inv = 1.0 / static_cast<double>(targets.size());
  double total = 0.0;
  for (const auto& [row, target] : targets) {
    const auto z = logits.row(row).template cast<double>();
    const double mx = z.maxCoeff();
    const double lse = mx + std::log((z.array() - mx).exp().sum());
    total += lse - z(target);
    if (dlogits) {
      auto g = dlogits->row(row);
      for (Eigen::Index c = 0; c < z.size(); ++c) {
        const double p = std::exp(z(c) - lse) - (c == target ? 1.0 : 0.0);
        g(c) += static_cast<T>(weight * inv * p);
      }
    }
  }
  return total * inv;
}

// ---------------------------------------------------------------------------
// Rectified-flow term

/// t = u / (u + shift * (1 - u)), u ~ U(0,1). t = 0 is pure noise, so a shift
/// above one puts more mass on noisy states.
inline double shift_timestep(double u, double shift) { return u / (u + shift * (1.0 - u)); }

inline double sample_t(CounterRng& rng, double shift) {
  require(shift >= 1.0, ErrorKind::InvalidArgument, "timestep shift must be >= 1");
  return shift_timestep(rng.uniform(), shift);
}

/// Noise, time and interpolated latents for one sample: zt = t * x_res + (1 - t) * z0.
struct FlowState {
  Mat<double> x_res;
  Mat<double> z0;
  Mat<double> zt;
  double t = 0.0;

  Mat<double> target_velocity() const { return x_res - z0; }
};

inline Mat<double> response_latents(const TokenStream& s) {
  const auto rows = s.response_latents();
  require(!rows.empty(), ErrorKind::InvalidArgument, "stream has no latent response");
  const int dim = static_cast<int>(s.tokens[rows[0]].vec.size());
  Mat<double> x(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < dim; ++c) x(static_cast<Eigen::Index>(r), c) = s.tokens[rows[r]].vec[c];
  return x;
}

inline void set_response_latents(TokenStream& s, const Mat<double>& z) {
  const auto rows = s.response_latents();
  require(static_cast<Eigen::Index>(rows.size()) == z.rows(), ErrorKind::ShapeMismatch, "latent count mismatch");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto& v = s.tokens[rows[r]].vec;
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = z(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
}

inline FlowState make_flow_state(const Mat<double>& x_res, double t, CounterRng& rng) {
  FlowState fs;
  fs.x_res = x_res;
  fs.t = t;
  fs.z0.resize(x_res.rows(), x_res.cols());
  for (Eigen::Index i = 0; i < fs.z0.size(); ++i) fs.z0.data()[i] = rng.normal();
  fs.zt = t * x_res + (1.0 - t) * fs.z0;
  return fs;
}

/// Mean over latent positions of the squared L2 norm of (v - target).
inline double flow_mse(const Mat<double>& velocity, const Mat<double>& target) {
  require(velocity.rows() == target.rows() && velocity.cols() == target.cols() && velocity.rows() > 0,
          ErrorKind::ShapeMismatch, "velocity shape does not match the flow target");
  return (velocity - target).rowwise().squaredNorm().mean();
}

/// Anything that maps (noised stream, t) to response-latent velocities.
using VelocityModel = std::function<Mat<double>(const TokenStream&, double)>;

template <typename T>
VelocityModel velocity_model(const ParameterStore<T>& params) {
  return [&params](const TokenStream& s, double t) {
    const auto F = forward(params, s, build_mask(s), t);
    Mat<double> v(static_cast<Eigen::Index>(s.response_latents().size()), F.velocity.cols());
    Eigen::Index r = 0;
    for (int pos : s.response_latents()) v.row(r++) = F.velocity.row(F.latent_index(pos)).template cast<double>();
    return v;
  };
}

/// Forward-only rectified-flow loss for one stream: draws t (shifted) then z0.
inline double rf_loss(const VelocityModel& model, const TokenStream& stream, CounterRng& rng, const LossConfig& cfg,
                      FlowState* state_out = nullptr) {
  const Mat<double> x = response_latents(stream);
  const double t = sample_t(rng, cfg.shift);
  FlowState fs = make_flow_state(x, t, rng);
  TokenStream noised = stream;
  set_response_latents(noised, fs.zt);
  const double loss = flow_mse(model(noised, t), fs.target_velocity());
  if (state_out) *state_out = std::move(fs);
  return loss;
}

template <typename T>
double rf_loss(const ParameterStore<T>& params, const TokenStream& stream, CounterRng& rng, const LossConfig& cfg) {
  return rf_loss(velocity_model(params), stream, rng, cfg);
}

// ---------------------------------------------------------------------------
// Classifier-free-guidance dropout

struct DropDecision {
  bool text = false;
  bool vit = false;
  bool cleanvae = false;
};

inline void null_groups(TokenStream& s, DropDecision d) {
  for (auto& t : s.tokens) {
    if (!t.is_condition) continue;
    if ((t.group == DropGroup::Instruction && d.text) || (t.group == DropGroup::Vit && d.vit) ||
        (t.group == DropGroup::CleanVae && d.cleanvae))
      t.nulled = true;
  }
}

/// Three independent Bernoulli draws (text, ViT, clean VAE), in that order.
inline DropDecision cfg_dropout(TokenStream& s, const LossConfig& cfg, CounterRng& rng) {
  DropDecision d;
  d.text = rng.bernoulli(cfg.drop_text);
  d.vit = rng.bernoulli(cfg.drop_vit);
  d.cleanvae = rng.bernoulli(cfg.drop_cleanvae);
  null_groups(s, d);
  return d;
}

// ---------------------------------------------------------------------------
// Combined loss

struct LossBreakdown {
  double total = 0.0;
  double rf = 0.0;  // mean over samples with latent responses (0 if none)
  double ar = 0.0;  // mean over samples with text responses (0 if none)
  int n_rf = 0;
  int n_ar = 0;
};

/// total = L_RF + lambda * L_AR, or L_RF alone in rf-only mode.
inline double combine_losses(double rf, double ar, bool has_rf, bool has_ar, double lambda, LossMode mode) {
  const double r = has_rf ? rf : 0.0;
  if (mode == LossMode::RfOnly) return r;
  return r + (has_ar ? lambda * ar : 0.0);
}

/// Per-sample averaged loss over a batch of streams, with optional gradient
/// accumulation. RNG draws per latent sample: dropout (3), t (1), z0.
template <typename T>
LossBreakdown combined_loss(const ParameterStore<T>& params, const std::vector<TokenStream>& batch,
                            const LossConfig& cfg, LossMode mode, CounterRng& rng,
                            ParameterStore<T>* grads = nullptr, bool apply_dropout = true) {
  cfg.validate();
  require(!batch.empty(), ErrorKind::InvalidArgument, "combined_loss: empty batch");
  LossBreakdown out;
  for (const auto& s : batch) {
    if (!s.response_latents().empty()) ++out.n_rf;
    if (mode == LossMode::Combined && !ar_targets(s, text_positions(s)).empty())
      ++out.n_ar;
  }
  require(out.n_rf + out.n_ar > 0, ErrorKind::InvalidArgument, "combined_loss: batch carries no trainable term");

  const double rf_w = out.n_rf ? 1.0 / out.n_rf : 0.0;
  const double ar_w = out.n_ar ? cfg.lambda / out.n_ar : 0.0;
  double rf_sum = 0.0, ar_sum = 0.0;
  for (const auto& src : batch) {
    TokenStream s = src;
    const bool has_rf = !s.response_latents().empty();
    std::optional<double> t;
    FlowState fs;
    if (has_rf) {
      if (apply_dropout) cfg_dropout(s, cfg, rng);
      t = sample_t(rng, cfg.shift);
      fs = make_flow_state(response_latents(s), *t, rng);
      set_response_latents(s, fs.zt);
    }
    const auto F = forward(params, s, build_mask(s), t);
    Mat<T> dlogits = Mat<T>::Zero(F.logits.rows(), F.logits.cols());
    Mat<T> dvel = Mat<T>::Zero(F.velocity.rows(), F.velocity.cols());
    bool used_ar = false;
    if (mode == LossMode::Combined && !ar_targets(s, F.text_rows).empty()) {
      ar_sum += ar_loss(F.logits, F.text_rows, s, grads ? &dlogits : nullptr, ar_w);
      used_ar = true;
    }
    if (has_rf) {
      const auto rows = s.response_latents();
      Mat<double> v(static_cast<Eigen::Index>(rows.size()), F.velocity.cols());
      std::vector<int> out_rows;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const int k = F.latent_index(rows[r]);
        out_rows.push_back(k);
        v.row(static_cast<Eigen::Index>(r)) = F.velocity.row(k).template cast<double>();
      }
      const Mat<double> diff = v - fs.target_velocity();
      rf_sum += diff.rowwise().squaredNorm().mean();
      if (grads) {
        const double scale = rf_w * 2.0 / static_cast<double>(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r)
          dvel.row(out_rows[r]) += (scale * diff.row(static_cast<Eigen::Index>(r))).template cast<T>();
      }
    }
    if (grads && (has_rf || used_ar)) backward(params, s, F, dlogits, dvel, *grads);
  }
  out.rf = out.n_rf ? rf_sum / out.n_rf : 0.0;
  out.ar = out.n_ar ? ar_sum / out.n_ar : 0.0;
  out.total = combine_losses(out.rf, out.ar, out.n_rf > 0, out.n_ar > 0, cfg.lambda, mode);
  return out;
}

}  // namespace motir
