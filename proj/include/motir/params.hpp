#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "motir/error.hpp"
#include "motir/rng.hpp"
#include "motir/vocab.hpp"

namespace motir {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Group : std::uint8_t { IqaExpert, ResExpert, VisionEncoder, TextEmbed, TextHead, VelocityHead, TimeEmbed };

inline constexpr std::array<Group, 7> kAllGroups = {Group::IqaExpert,   Group::ResExpert,   Group::VisionEncoder,
                                                    Group::TextEmbed,   Group::TextHead,    Group::VelocityHead,
                                                    Group::TimeEmbed};

inline std::string_view to_string(Group g) {
  switch (g) {
    case Group::IqaExpert: return "iqa_expert";
    case Group::ResExpert: return "res_expert";
    case Group::VisionEncoder: return "vision_encoder";
    case Group::TextEmbed: return "text_embed";
    case Group::TextHead: return "text_head";
    case Group::VelocityHead: return "velocity_head";
    case Group::TimeEmbed: return "time_embed";
  }
  return "?";
}

inline Group parse_group(std::string_view s) {
  for (auto g : kAllGroups)
    if (to_string(g) == s) return g;
  fail(ErrorKind::InvalidArgument, "unknown parameter group '" + std::string(s) + "'");
}

struct ModelConfig {
  int d_model = 64;
  int n_blocks = 2;
  int n_heads = 2;
  int vocab_size = vocab::kSize;
  int patch = 4;
  int max_seq_len = 512;
  int ff_mult = 4;

  int token_dim() const noexcept { return 3 * patch * patch; }
  int d_ff() const noexcept { return ff_mult * d_model; }
  int head_dim() const noexcept { return d_model / n_heads; }

  void validate() const {
    require(d_model > 0 && n_blocks > 0 && n_heads > 0 && patch > 0 && max_seq_len > 0 && ff_mult > 0,
            ErrorKind::InvalidArgument, "model dimensions must be positive");
    require(d_model % n_heads == 0, ErrorKind::InvalidArgument,
            "d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
    require(d_model % 4 == 0, ErrorKind::InvalidArgument, "d_model must be divisible by 4 (2-D position encoding)");
    require(vocab_size >= vocab::kSize, ErrorKind::InvalidArgument,
            "vocab_size must cover the byte vocabulary and specials (" + std::to_string(vocab::kSize) + ")");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Init : std::uint8_t { Zero, One, Normal, NormalOut, FanIn };

template <typename T>
struct Tensor {
  std::string name;
  Group group;
  Init init;
  Mat<T> value;
};

/// Slot indices of one expert's per-block parameters.
struct ExpertSlots {
  int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct BlockSlots {
  std::array<ExpertSlots, 2> expert;  // 0: iqa, 1: res
  int mod_w, mod_b;                   // timestep modulation for latent rows (res_expert)
};

struct Layout {
  std::vector<BlockSlots> blocks;
  int text_table, null_text, norm_g, norm_b, head_w, head_b;
  int vis_w, vis_b, null_vit;
  int lat_w, lat_b, null_lat;
  int time_w1, time_b1, time_w2, time_b2;
  int vmod_w, vmod_b, vel_w, vel_b;
};

/// Named parameter tensors, each tagged with exactly one group. The tensor list
/// and its order are a pure function of the config. Biases are 1xN rows.
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;

  explicit ParameterStore(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.d_model, f = cfg.d_ff(), p = cfg.token_dim(), v = cfg.vocab_size;
    for (int b = 0; b < cfg.n_blocks; ++b) {
      BlockSlots bs{};
      for (int e = 0; e < 2; ++e) {
        const Group g = e == 0 ? Group::IqaExpert : Group::ResExpert;
        const std::string pre = "block" + std::to_string(b) + (e == 0 ? ".iqa." : ".res.");
        auto& x = bs.expert[e];
        x.ln1_g = add(pre + "ln1.g", g, 1, d, Init::One);
        x.ln1_b = add(pre + "ln1.b", g, 1, d, Init::Zero);
        x.wq = add(pre + "attn.wq", g, d, d, Init::Normal);
        x.bq = add(pre + "attn.bq", g, 1, d, Init::Zero);
        x.wk = add(pre + "attn.wk", g, d, d, Init::Normal);
        x.bk = add(pre + "attn.bk", g, 1, d, Init::Zero);
        x.wv = add(pre + "attn.wv", g, d, d, Init::Normal);
        x.bv = add(pre + "attn.bv", g, 1, d, Init::Zero);
        x.wo = add(pre + "attn.wo", g, d, d, Init::NormalOut);
        x.bo = add(pre + "attn.bo", g, 1, d, Init::Zero);
        x.ln2_g = add(pre + "ln2.g", g, 1, d, Init::One);
        x.ln2_b = add(pre + "ln2.b", g, 1, d, Init::Zero);
        x.w1 = add(pre + "ffn.w1", g, f, d, Init::Normal);
        x.b1 = add(pre + "ffn.b1", g, 1, f, Init::Zero);
        x.w2 = add(pre + "ffn.w2", g, d, f, Init::NormalOut);
        x.b2 = add(pre + "ffn.b2", g, 1, d, Init::Zero);
      }
      const std::string pre = "block" + std::to_string(b) + ".res.";
      bs.mod_w = add(pre + "mod.w", Group::ResExpert, 4 * d, d, Init::Normal);
      bs.mod_b = add(pre + "mod.b", Group::ResExpert, 1, 4 * d, Init::Zero);
      layout_.blocks.push_back(bs);
    }
    auto& L = layout_;
    L.text_table = add("text_embed.table", Group::TextEmbed, v, d, Init::Normal);
    L.null_text = add("iqa.null_text", Group::IqaExpert, 1, d, Init::Normal);
    L.norm_g = add("iqa.norm_f.g", Group::IqaExpert, 1, d, Init::One);
    L.norm_b = add("iqa.norm_f.b", Group::IqaExpert, 1, d, Init::Zero);
    L.head_w = add("text_head.w", Group::TextHead, v, d, Init::Normal);
    L.head_b = add("text_head.b", Group::TextHead, 1, v, Init::Zero);
    L.vis_w = add("vision.patch.w", Group::VisionEncoder, d, p, Init::FanIn);
    L.vis_b = add("vision.patch.b", Group::VisionEncoder, 1, d, Init::Zero);
    L.null_vit = add("vision.null", Group::VisionEncoder, 1, d, Init::Normal);
    L.lat_w = add("res.latent_in.w", Group::ResExpert, d, p, Init::FanIn);
    L.lat_b = add("res.latent_in.b", Group::ResExpert, 1, d, Init::Zero);
    L.null_lat = add("res.null_latent", Group::ResExpert, 1, d, Init::Normal);
    L.time_w1 = add("time.w1", Group::TimeEmbed, d, d, Init::Normal);
    L.time_b1 = add("time.b1", Group::TimeEmbed, 1, d, Init::Zero);
    L.time_w2 = add("time.w2", Group::TimeEmbed, d, d, Init::Normal);
    L.time_b2 = add("time.b2", Group::TimeEmbed, 1, d, Init::Zero);
    L.vmod_w = add("velocity.mod.w", Group::VelocityHead, 2 * d, d, Init::Normal);
    L.vmod_b = add("velocity.mod.b", Group::VelocityHead, 1, 2 * d, Init::Zero);
    L.vel_w = add("velocity.w", Group::VelocityHead, p, d, Init::Normal);
    L.vel_b = add("velocity.b", Group::VelocityHead, 1, p, Init::Zero);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const Layout& layout() const noexcept { return layout_; }

  std::size_t size() const noexcept { return tensors_.size(); }
  Tensor<T>& operator[](std::size_t i) noexcept { return tensors_[i]; }
  const Tensor<T>& operator[](std::size_t i) const noexcept { return tensors_[i]; }
  const Mat<T>& value(int slot) const noexcept { return tensors_[static_cast<std::size_t>(slot)].value; }
  Mat<T>& value(int slot) noexcept { return tensors_[static_cast<std::size_t>(slot)].value; }

  auto begin() noexcept { return tensors_.begin(); }
  auto end() noexcept { return tensors_.end(); }
  auto begin() const noexcept { return tensors_.begin(); }
  auto end() const noexcept { return tensors_.end(); }

  const Tensor<T>* find(std::string_view name) const {
    for (const auto& t : tensors_)
      if (t.name == name) return &t;
    return nullptr;
  }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  std::size_t parameter_count(Group g) const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_)
      if (t.group == g) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  /// Same layout, every value zero (gradient buffers, optimizer moments).
  ParameterStore zeros_like() const {
    ParameterStore out = *this;
    for (auto& t : out.tensors_) t.value.setZero();
    return out;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out(cfg_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) out[i].value = tensors_[i].value.template cast<U>();
    return out;
  }

 private:
  int add(std::string name, Group g, int rows, int cols, Init init) {
    tensors_.push_back({std::move(name), g, init, Mat<T>::Zero(rows, cols)});
    return static_cast<int>(tensors_.size() - 1);
  }

  ModelConfig cfg_;
  Layout layout_{};
  std::vector<Tensor<T>> tensors_;
};

/// Gaussian init with std 0.02; output projections additionally scaled by
/// 1/sqrt(2 * n_blocks). Patch projections use std 1/sqrt(fan_in) so image
/// content is not drowned by the unit-amplitude position code. Norm gains start
/// at one, biases at zero.
template <typename T>
ParameterStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterStore<T> store(cfg);
  CounterRng rng(seed);
  const double out_scale = 1.0 / std::sqrt(2.0 * cfg.n_blocks);
  for (auto& t : store) {
    switch (t.init) {
      case Init::Zero: t.value.setZero(); break;
      case Init::One: t.value.setOnes(); break;
      case Init::Normal:
      case Init::NormalOut:
      case Init::FanIn: {
        const double std = t.init == Init::FanIn    ? 1.0 / std::sqrt(static_cast<double>(t.value.cols()))
                           : t.init == Init::NormalOut ? 0.02 * out_scale
                                                       : 0.02;
        for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = static_cast<T>(std * rng.normal());
        break;
      }
    }
  }
  return store;
}

}  // namespace motir
