#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "motir/corpus.hpp"
#include "motir/error.hpp"
#include "motir/imaging.hpp"
#include "motir/model.hpp"
#include "motir/objectives.hpp"
#include "motir/stream.hpp"

namespace motir {

struct SampleConfig {
  int n_steps = 32;
  double cfg_scale = 2.0;
  int text_max_len = 256;
  double temperature = 0.0;  // 0 = greedy
  std::uint64_t seed = 0;

  void validate() const {
    require(n_steps >= 1, ErrorKind::InvalidArgument, "n_steps must be >= 1");
    require(cfg_scale >= 0.0 && std::isfinite(cfg_scale), ErrorKind::InvalidArgument, "cfg_scale must be >= 0");
    require(text_max_len >= 1, ErrorKind::InvalidArgument, "text_max_len must be >= 1");
    require(temperature >= 0.0, ErrorKind::InvalidArgument, "temperature must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Text

struct TextResult {
  std::vector<int> tokens;  // generated ids, including a final EOS when one was produced
  bool truncated = false;

  std::string text() const {
    std::vector<int> bytes;
    for (int id : tokens)
      if (!vocab::is_special(id)) bytes.push_back(id);
    return detokenize(bytes);
  }
};

/// Opens a response text span (BOS) at the end of the stream.
inline void begin_response_text(TokenStream& s) {
  Token t;
  t.modality = Modality::Text;
  t.id = vocab::kBos;
  t.is_condition = false;
  s.tokens.push_back(t);
  ++s.l_res;
}

inline void append_response_token(TokenStream& s, int id) {
  Token t;
  t.modality = Modality::Text;
  t.id = id;
  t.is_condition = false;
  s.tokens.push_back(t);
  ++s.l_res;
}

/// Next-token decoding from the last position until EOS or `text_max_len` tokens.
/// Generated tokens are appended to `s` as response text.
template <typename T>
TextResult generate_text(const ParameterStore<T>& params, TokenStream& s, const SampleConfig& cfg) {
  cfg.validate();
  require(s.length() > 0 && !s.tokens.back().is_condition && s.tokens.back().modality == Modality::Text,
          ErrorKind::InvalidArgument, "generate_text: stream must end at a response text position");
  require(s.response_latents().empty(), ErrorKind::InvalidArgument, "generate_text: stream already holds latents");
  CounterRng rng(derive_seed(cfg.seed, 0x7E47u));
  TextResult out;
  for (int k = 0; k < cfg.text_max_len; ++k) {
    require(s.length() < params.config().max_seq_len, ErrorKind::OutOfRange, "generate_text: stream reached max_seq_len");
    const auto F = forward(params, s, build_mask(s), std::nullopt);
    const auto z = F.logits.row(F.text_index(s.length() - 1)).template cast<double>();
    int id = 0;
    if (cfg.temperature == 0.0) {
      z.maxCoeff(&id);
    } else {
      const Eigen::RowVectorXd p = ((z.array() - z.maxCoeff()) / cfg.temperature).exp();
      double u = rng.uniform() * p.sum();
      id = static_cast<int>(p.size()) - 1;
      for (Eigen::Index c = 0; c < p.size(); ++c) {
        u -= p(c);
        if (u < 0.0) {
          id = static_cast<int>(c);
          break;
        }
      }
    }
    append_response_token(s, id);
    out.tokens.push_back(id);
    if (id == vocab::kEos) return out;
  }
  out.truncated = true;
  return out;
}

// ---------------------------------------------------------------------------
// Images

/// Appends zero-valued response latents shaped like `like` (placeholders for sampling).
inline void append_placeholder_latents(TokenStream& s, int height, int width) {
  check_patchable(height, width, s.patch);
  const int rows = height / s.patch, cols = width / s.patch, dim = 3 * s.patch * s.patch;
  for (int i = 0; i < rows * cols; ++i) {
    Token t;
    t.modality = Modality::GenLatent;
    t.vec.assign(static_cast<std::size_t>(dim), 0.0);
    t.row = i / cols;
    t.col = i % cols;
    t.is_condition = false;
    s.tokens.push_back(std::move(t));
    ++s.l_res;
  }
}

/// The unconditional twin of a stream: every condition group nulled.
inline TokenStream unconditional(const TokenStream& s) {
  TokenStream u = s;
  null_groups(u, {true, true, true});
  return u;
}

/// Euler integration from t=0 (noise) to t=1 with guided velocity
/// v = v_uncond + scale * (v_cond - v_uncond). Returns the final response latents;
/// `trajectory` (optional) receives the state after every step.
inline Mat<double> integrate_flow(const VelocityModel& model, const TokenStream& stream, const SampleConfig& cfg,
                                  std::vector<Mat<double>>* trajectory = nullptr) {
  cfg.validate();
  const auto rows = stream.response_latents();
  require(!rows.empty(), ErrorKind::InvalidArgument, "sample_image: stream has no response latent slots");
  TokenStream cond = stream;
  TokenStream uncond = unconditional(stream);
  CounterRng rng(derive_seed(cfg.seed, 0x1A7Eu));
  Mat<double> z(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(stream.tokens[rows[0]].vec.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  const double dt = 1.0 / cfg.n_steps;
  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = k * dt;
    set_response_latents(cond, z);
    set_response_latents(uncond, z);
    const Mat<double> vc = model(cond, t);
    const Mat<double> vu = model(uncond, t);
    z += dt * (vu + cfg.cfg_scale * (vc - vu));
    require(z.allFinite(), ErrorKind::NonFinite, "non-finite latents at sampling step " + std::to_string(k));
    if (trajectory) trajectory->push_back(z);
  }
  return z;
}

inline Image latents_to_image(const TokenStream& s, const Mat<double>& z) {
  const auto [rows, cols] = s.latent_grid();
  return decode(make_latent_grid(rows, cols, s.patch, std::vector<double>(z.data(), z.data() + z.size())), true);
}

template <typename T>
Image sample_image(const ParameterStore<T>& params, const TokenStream& stream, const SampleConfig& cfg) {
  return latents_to_image(stream, integrate_flow(velocity_model(params), stream, cfg));
}

// ---------------------------------------------------------------------------
// Task pipelines

enum class InferTask { Iqa, Restore, AssessRestore };
enum class PromptMode { Simple, Analyze, External };

inline InferTask parse_infer_task(std::string_view s) {
  if (s == "iqa") return InferTask::Iqa;
  if (s == "restore") return InferTask::Restore;
  if (s == "assess-restore") return InferTask::AssessRestore;
  fail(ErrorKind::InvalidArgument, "unknown task '" + std::string(s) + "' (expected iqa, restore or assess-restore)");
}

inline PromptMode parse_prompt_mode(std::string_view s) {
  if (s == "simple") return PromptMode::Simple;
  if (s == "analyze") return PromptMode::Analyze;
  if (s == "external") return PromptMode::External;
  fail(ErrorKind::InvalidArgument, "unknown prompt mode '" + std::string(s) + "' (expected simple, analyze or external)");
}

inline std::string_view to_string(PromptMode m) {
  switch (m) {
    case PromptMode::Simple: return "simple";
    case PromptMode::Analyze: return "analyze";
    case PromptMode::External: return "external";
  }
  return "?";
}

struct TaskInputs {
  std::vector<Image> images;
  std::optional<std::string> instruction;  // overrides the mode's default prompt
  std::string external_analysis;           // used by PromptMode::External
};

struct TaskOutput {
  std::optional<std::string> text;
  std::optional<Image> image;
  bool truncated = false;
};

inline std::string default_instruction(InferTask task, PromptMode mode, std::size_t n_images) {
  if (task == InferTask::Iqa) return n_images == 2 ? prompts::kCompare[0] : prompts::kScore[0];
  return mode == PromptMode::Analyze ? prompts::kAnalyzeThenRestore[0] : prompts::kMixDegraded;
}

/// Condition stream of a restore request, optionally followed by a closed
/// response text span, then placeholder latents.
inline TokenStream restore_stream(const std::string& instruction, const Image& lq,
                                  const std::optional<std::string>& analysis, const StreamOptions& opt) {
  auto b = condition_builder({{instruction}, {lq}}, opt);
  if (analysis) b.text(*analysis, false);
  TokenStream s = b.finish();
  append_placeholder_latents(s, lq.height(), lq.width());
  return s;
}

template <typename T>
TaskOutput run_task(const ParameterStore<T>& params, InferTask task, const TaskInputs& in, const SampleConfig& cfg,
                    PromptMode mode = PromptMode::Simple, const StreamOptions& opt = {}) {
  cfg.validate();
  if (task == InferTask::AssessRestore && mode == PromptMode::Simple) mode = PromptMode::Analyze;
  const std::string instruction = in.instruction.value_or(default_instruction(task, mode, in.images.size()));
  TaskOutput out;

  if (task == InferTask::Iqa) {
    require(in.images.size() == 1 || in.images.size() == 2, ErrorKind::InvalidArgument,
            "iqa takes one image (score) or two (compare), got " + std::to_string(in.images.size()));
    std::vector<Segment> cond = {{instruction}};
    for (const auto& img : in.images) cond.push_back({img});
    TokenStream s = condition_builder(cond, opt).finish();
    begin_response_text(s);
    const auto r = generate_text(params, s, cfg);
    out.text = r.text();
    out.truncated = r.truncated;
    return out;
  }

  require(in.images.size() == 1, ErrorKind::InvalidArgument,
          "restoration takes exactly one image, got " + std::to_string(in.images.size()));
  const Image& lq = in.images[0];
  TokenStream s;
  switch (mode) {
    case PromptMode::Simple: s = restore_stream(instruction, lq, std::nullopt, opt); break;
    case PromptMode::External:
      s = restore_stream(instruction, lq, in.external_analysis, opt);
      out.text = in.external_analysis;
      break;
    case PromptMode::Analyze: {
      s = condition_builder({{instruction}, {lq}}, opt).finish();
      begin_response_text(s);
      const auto r = generate_text(params, s, cfg);
      if (r.truncated) append_response_token(s, vocab::kEos);
      out.text = r.text();
      out.truncated = r.truncated;
      append_placeholder_latents(s, lq.height(), lq.width());
      break;
    }
  }
  out.image = sample_image(params, s, cfg);
  return out;
}

}  // namespace motir
