#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "motir/corpus.hpp"
#include "motir/error.hpp"
#include "motir/imaging.hpp"
#include "motir/vocab.hpp"

namespace motir {

enum class Modality : std::uint8_t { Text, UndVision, GenLatent };

/// Condition groups that classifier-free-guidance dropout may replace.
enum class DropGroup : std::uint8_t { None, Instruction, Vit, CleanVae };

struct Token {
  Modality modality = Modality::Text;
  int id = 0;                  // text tokens
  std::vector<double> vec;     // und_vision / gen_latent payload
  int row = -1;                // patch coordinate (vision/latent)
  int col = -1;
  int image_base = 0;          // sequence index of the owning IMG_START (vision)
  bool is_condition = true;
  DropGroup group = DropGroup::None;
  bool nulled = false;         // content replaced by the learned null embedding
};

struct TokenStream {
  std::vector<Token> tokens;
  int l_con = 0;
  int l_res = 0;
  int patch = 4;

  int length() const noexcept { return static_cast<int>(tokens.size()); }

  std::vector<int> response_latents() const {
    std::vector<int> out;
    for (int i = 0; i < length(); ++i)
      if (!tokens[i].is_condition && tokens[i].modality == Modality::GenLatent) out.push_back(i);
    return out;
  }
  bool has_latents() const {
    for (const auto& t : tokens)
      if (t.modality == Modality::GenLatent) return true;
    return false;
  }
  bool has_response_text() const {
    for (const auto& t : tokens)
      if (!t.is_condition && t.modality == Modality::Text) return true;
    return false;
  }
  /// Grid shape of the response latents (rows, cols), or {0,0}.
  std::pair<int, int> latent_grid() const {
    int rows = 0, cols = 0;
    for (const auto& t : tokens)
      if (!t.is_condition && t.modality == Modality::GenLatent) {
        rows = std::max(rows, t.row + 1);
        cols = std::max(cols, t.col + 1);
      }
    return {rows, cols};
  }

  void check_invariants() const {
    require(l_con >= 1, ErrorKind::State, "stream has no condition tokens");
    require(l_con + l_res == length(), ErrorKind::State, "l_con + l_res != l");
    for (int i = 0; i < length(); ++i)
      require(tokens[i].is_condition == (i < l_con), ErrorKind::State, "condition tokens must precede response tokens");
  }
};

inline std::vector<int> text_positions(const TokenStream& s) {
  std::vector<int> rows;
  for (int i = 0; i < s.length(); ++i)
    if (s.tokens[i].modality == Modality::Text) rows.push_back(i);
  return rows;
}

struct StreamOptions {
  int patch = 4;
  int max_length = 512;
};

/// Incremental builder; condition segments must be appended before response ones.
class StreamBuilder {
 public:
  explicit StreamBuilder(StreamOptions opt) : opt_(opt) { s_.patch = opt.patch; }

  void text(const std::string& str, bool condition, bool delimit = true) {
    const DropGroup g = condition ? DropGroup::Instruction : DropGroup::None;
    if (delimit) push_text(vocab::kBos, condition, g);
    for (int id : tokenize(str)) push_text(id, condition, g);
    if (delimit) push_text(vocab::kEos, condition, g);
  }

  void push_text(int id, bool condition, DropGroup g = DropGroup::None) {
    Token t;
    t.modality = Modality::Text;
    t.id = id;
    t.is_condition = condition;
    t.group = g;
    push(std::move(t));
  }

  /// Understanding-side image: IMG_START, one patch token per cell, IMG_END.
  void input_image(const Image& img) {
    const int base = static_cast<int>(s_.tokens.size());
    push_text(vocab::kImgStart, true);
    const LatentGrid lat = encode(img, opt_.patch);
    for (int i = 0; i < lat.token_count(); ++i) {
      Token t;
      t.modality = Modality::UndVision;
      t.vec.assign(lat.token(i).begin(), lat.token(i).end());
      t.row = i / lat.cols;
      t.col = i % lat.cols;
      t.image_base = base;
      t.is_condition = true;
      t.group = DropGroup::Vit;
      push(std::move(t));
    }
    push_text(vocab::kImgEnd, true);
  }

  /// Generation-side latents (response target, or clean VAE condition tokens).
  void latents(const LatentGrid& lat, bool condition) {
    for (int i = 0; i < lat.token_count(); ++i) {
      Token t;
      t.modality = Modality::GenLatent;
      t.vec.assign(lat.token(i).begin(), lat.token(i).end());
      t.row = i / lat.cols;
      t.col = i % lat.cols;
      t.is_condition = condition;
      t.group = condition ? DropGroup::CleanVae : DropGroup::None;
      push(std::move(t));
    }
  }

  TokenStream finish() {
    s_.l_res = s_.length() - s_.l_con;
    s_.check_invariants();
    return std::move(s_);
  }

 private:
  void push(Token t) {
    require(static_cast<int>(s_.tokens.size()) < opt_.max_length, ErrorKind::OutOfRange,
            "stream exceeds maximum length " + std::to_string(opt_.max_length));
    if (t.is_condition) {
      require(s_.l_con == static_cast<int>(s_.tokens.size()), ErrorKind::State,
              "condition token appended after a response token");
      ++s_.l_con;
    }
    s_.tokens.push_back(std::move(t));
  }

  StreamOptions opt_;
  TokenStream s_;
};

/// Condition part only (instruction text and input images), in segment order.
inline StreamBuilder condition_builder(const std::vector<Segment>& condition, const StreamOptions& opt) {
  StreamBuilder b(opt);
  for (const auto& seg : condition) {
    if (seg.is_text()) b.text(seg.text(), true);
    else b.input_image(seg.image());
  }
  return b;
}

/// Response text is BOS...EOS and precedes response latents, so latents can
/// attend to the analysis.
inline TokenStream build_stream(const TrainingSample& sample, const StreamOptions& opt = {}) {
  sample.validate();
  auto b = condition_builder(sample.condition, opt);
  for (const auto& seg : sample.response)
    if (seg.is_text()) b.text(seg.text(), false);
  for (const auto& seg : sample.response)
    if (!seg.is_text()) b.latents(encode(seg.image(), opt.patch), false);
  return b.finish();
}

/// Row i may attend to column j when mask[i*n+j] != 0.
struct AttentionMask {
  int n = 0;
  std::vector<std::uint8_t> allow;

  bool operator()(int i, int j) const noexcept { return allow[static_cast<std::size_t>(i) * n + j] != 0; }
};

/// Condition: bidirectional within the condition. Response text: causal over
/// condition and earlier response text. Response latents see the whole stream
/// (condition, all response text, each other). Text never sees response latents.
inline AttentionMask build_mask(const TokenStream& s) {
  const int n = s.length();
  AttentionMask m{n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, 0)};
  for (int i = 0; i < n; ++i) {
    const Token& ti = s.tokens[i];
    for (int j = 0; j < n; ++j) {
      const Token& tj = s.tokens[j];
      bool ok = false;
      if (ti.is_condition) {
        ok = tj.is_condition;
      } else if (ti.modality == Modality::GenLatent) {
        ok = true;
      } else {
        ok = tj.is_condition || (tj.modality != Modality::GenLatent && j <= i);
      }
      m.allow[static_cast<std::size_t>(i) * n + j] = ok ? 1 : 0;
    }
  }
  return m;
}

/// Each token attends to itself only.
inline AttentionMask identity_mask(int n) {
  AttentionMask m{n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, 0)};
  for (int i = 0; i < n; ++i) m.allow[static_cast<std::size_t>(i) * n + i] = 1;
  return m;
}

}  // namespace motir
