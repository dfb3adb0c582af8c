#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "motir/error.hpp"
#include "motir/params.hpp"
#include "motir/stream.hpp"

// Mixture-of-transformers backbone. Text and und_vision tokens run through the
// IQA expert's projections, gen_latent tokens through the restoration expert's;
// the softmax attention in each block is computed jointly over the whole stream.

namespace motir {

namespace nn {

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kLnEps = 1e-5;

template <typename T>
struct LnCache {
  Mat<T> xhat;
  ColVec<T> rstd;
};

template <typename T>
LnCache<T> layer_norm(const Mat<T>& x) {
  LnCache<T> c;
  const ColVec<T> mean = x.rowwise().mean();
  c.xhat = x.colwise() - mean;
  const ColVec<T> var = c.xhat.array().square().rowwise().mean();
  c.rstd = (var.array() + static_cast<T>(kLnEps)).rsqrt();
  c.xhat = c.xhat.array().colwise() * c.rstd.array();
  return c;
}

/// dx from d(xhat).
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dxhat, const LnCache<T>& c) {
  const ColVec<T> m1 = dxhat.rowwise().mean();
  const ColVec<T> m2 = (dxhat.array() * c.xhat.array()).rowwise().mean();
  Mat<T> dx = dxhat.colwise() - m1;
  dx -= (c.xhat.array().colwise() * m2.array()).matrix();
  return dx.array().colwise() * c.rstd.array();
}

template <typename T>
Mat<T> affine(const Mat<T>& xhat, const Mat<T>& g, const Mat<T>& b) {
  return (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
}

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
T gelu(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::tanh(c * (x + static_cast<T>(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T th = std::tanh(c * (x + static_cast<T>(0.044715) * x * x * x));
  return static_cast<T>(0.5) * (static_cast<T>(1) + th) +
         static_cast<T>(0.5) * x * (static_cast<T>(1) - th * th) * c *
             (static_cast<T>(1) + static_cast<T>(3 * 0.044715) * x * x);
}

template <typename T>
T sigmoid(T x) {
  return static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x));
}

template <typename T>
T silu(T x) {
  return x * sigmoid(x);
}

template <typename T>
T silu_grad(T x) {
  const T s = sigmoid(x);
  return s * (static_cast<T>(1) + x * (static_cast<T>(1) - s));
}

/// Sinusoidal code of one scalar position into `dim` channels (sin/cos pairs).
inline void sinusoid(double pos, int dim, double* out) {
  for (int k = 0; k < dim / 2; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / dim);
    out[2 * k] = std::sin(pos * freq);
    out[2 * k + 1] = std::cos(pos * freq);
  }
}

}  // namespace nn

/// 1-D code for text, 2-D code (row half, column half) for patch tokens;
/// und_vision tokens also carry the 1-D code of their IMG_START index.
inline std::vector<double> position_code(const Token& tok, int seq_index, int d) {
  std::vector<double> pe(static_cast<std::size_t>(d), 0.0);
  if (tok.modality == Modality::Text) {
    nn::sinusoid(seq_index, d, pe.data());
    return pe;
  }
  nn::sinusoid(tok.row, d / 2, pe.data());
  nn::sinusoid(tok.col, d / 2, pe.data() + d / 2);
  if (tok.modality == Modality::UndVision) {
    std::vector<double> base(static_cast<std::size_t>(d));
    nn::sinusoid(tok.image_base, d, base.data());
    for (int i = 0; i < d; ++i) pe[i] += base[i];
  }
  return pe;
}

/// Frequency features of the flow time t (scaled by 1000).
inline std::vector<double> time_features(double t, int d) {
  std::vector<double> f(static_cast<std::size_t>(d));
  const int half = d / 2;
  for (int k = 0; k < half; ++k) {
    const double w = std::exp(-std::log(10000.0) * k / half);
    f[k] = std::sin(1000.0 * t * w);
    f[half + k] = std::cos(1000.0 * t * w);
  }
  return f;
}

template <typename T>
struct ExpertCache {
  std::vector<int> rows;
  nn::LnCache<T> ln1, ln2;
  Mat<T> n1, m1;  // affine LN output, then (for latents) modulated input to q/k/v
  Mat<T> n2, m2;
  Mat<T> u, g;    // FFN pre-activation and activation
};

template <typename T>
struct BlockCache {
  std::array<ExpertCache<T>, 2> expert;
  Mat<T> q, k, v, o;
  std::vector<Mat<T>> probs;  // one n x n matrix per head
  nn::RowVec<T> mod;          // [shift1 | scale1 | shift2 | scale2] for latent rows
};

/// Everything forward produced, including what backward needs.
template <typename T>
struct ForwardPass {
  int n = 0;
  std::array<std::vector<int>, 2> expert_rows;
  std::vector<int> text_rows;    // rows that emit logits (every text token)
  std::vector<int> latent_rows;  // rows that emit velocities (every gen_latent token)
  std::vector<int> vision_rows;
  Mat<T> mask_add;
  Mat<T> vision_in, latent_in;

  bool has_time = false;
  nn::RowVec<T> t_feat, t_pre, t_hidden, t_emb, t_act;

  std::vector<BlockCache<T>> blocks;

  nn::LnCache<T> text_ln, latent_ln;
  Mat<T> text_norm, latent_mod_in;
  nn::RowVec<T> vmod;

  Mat<T> logits;    // text_rows.size() x vocab
  Mat<T> velocity;  // latent_rows.size() x token_dim

  /// Output row of sequence position `pos` in logits/velocity, or -1.
  int text_index(int pos) const { return index_of(text_rows, pos); }
  int latent_index(int pos) const { return index_of(latent_rows, pos); }

 private:
  static int index_of(const std::vector<int>& rows, int pos) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i] == pos) return static_cast<int>(i);
    return -1;
  }
};

inline int expert_of(Modality m) noexcept { return m == Modality::GenLatent ? 1 : 0; }

template <typename T>
ForwardPass<T> forward(const ParameterStore<T>& P, const TokenStream& s, const AttentionMask& mask,
                       std::optional<double> t) {
  using namespace nn;
  const ModelConfig& cfg = P.config();
  const Layout& L = P.layout();
  const int d = cfg.d_model, n = s.length(), tdim = cfg.token_dim();
  require(n > 0, ErrorKind::InvalidArgument, "empty stream");
  require(n <= cfg.max_seq_len, ErrorKind::OutOfRange,
          "stream length " + std::to_string(n) + " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  require(mask.n == n, ErrorKind::ShapeMismatch, "mask size does not match stream length");

  ForwardPass<T> F;
  F.n = n;
  for (int i = 0; i < n; ++i) {
    const Token& tok = s.tokens[i];
    F.expert_rows[expert_of(tok.modality)].push_back(i);
    switch (tok.modality) {
      case Modality::Text:
        require(tok.id >= 0 && tok.id < cfg.vocab_size, ErrorKind::InvalidArgument,
                "text id " + std::to_string(tok.id) + " outside vocabulary");
        F.text_rows.push_back(i);
        break;
      case Modality::UndVision:
        require(static_cast<int>(tok.vec.size()) == tdim, ErrorKind::ShapeMismatch, "vision payload length mismatch");
        F.vision_rows.push_back(i);
        break;
      case Modality::GenLatent:
        require(static_cast<int>(tok.vec.size()) == tdim, ErrorKind::ShapeMismatch, "latent payload length mismatch");
        F.latent_rows.push_back(i);
        break;
    }
  }
  F.has_time = !F.latent_rows.empty();
  require(F.has_time == t.has_value(), ErrorKind::InvalidArgument,
          F.has_time ? "stream has latent tokens but no timestep was given"
                     : "timestep given for a stream without latent tokens");
  if (t) require(*t >= 0.0 && *t <= 1.0, ErrorKind::OutOfRange, "timestep must lie in [0,1]");

  F.mask_add = Mat<T>::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (!mask(i, j)) F.mask_add(i, j) = -std::numeric_limits<T>::infinity();

  // Embeddings.
  Mat<T> h(n, d);
  for (int i = 0; i < n; ++i) {
    const auto pe = position_code(s.tokens[i], i, d);
    for (int c = 0; c < d; ++c) h(i, c) = static_cast<T>(pe[c]);
  }
  auto gather_payload = [&](const std::vector<int>& rows) {
    Mat<T> x(static_cast<Eigen::Index>(rows.size()), tdim);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int c = 0; c < tdim; ++c) x(r, c) = static_cast<T>(s.tokens[rows[r]].vec[c]);
    return x;
  };
  F.vision_in = gather_payload(F.vision_rows);
  F.latent_in = gather_payload(F.latent_rows);
  const Mat<T> vis_emb = linear(F.vision_in, P.value(L.vis_w), P.value(L.vis_b));
  const Mat<T> lat_emb = linear(F.latent_in, P.value(L.lat_w), P.value(L.lat_b));
  for (int r : F.text_rows) {
    const Token& tok = s.tokens[r];
    h.row(r) += tok.nulled ? P.value(L.null_text).row(0) : P.value(L.text_table).row(tok.id);
  }
  for (std::size_t k = 0; k < F.vision_rows.size(); ++k) {
    const int r = F.vision_rows[k];
    h.row(r) += s.tokens[r].nulled ? P.value(L.null_vit).row(0) : vis_emb.row(static_cast<Eigen::Index>(k));
  }
  for (std::size_t k = 0; k < F.latent_rows.size(); ++k) {
    const int r = F.latent_rows[k];
    h.row(r) += s.tokens[r].nulled ? P.value(L.null_lat).row(0) : lat_emb.row(static_cast<Eigen::Index>(k));
  }

  // Timestep embedding.
  if (F.has_time) {
    const auto tf = time_features(*t, d);
    F.t_feat = RowVec<T>(d);
    for (int c = 0; c < d; ++c) F.t_feat(c) = static_cast<T>(tf[c]);
    F.t_pre = F.t_feat * P.value(L.time_w1).transpose() + P.value(L.time_b1);
    F.t_hidden = F.t_pre.unaryExpr([](T x) { return silu(x); });
    F.t_emb = F.t_hidden * P.value(L.time_w2).transpose() + P.value(L.time_b2);
    F.t_act = F.t_emb.unaryExpr([](T x) { return silu(x); });
  }

  const int heads = cfg.n_heads, dh = cfg.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  F.blocks.resize(static_cast<std::size_t>(cfg.n_blocks));
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const BlockSlots& bs = L.blocks[b];
    BlockCache<T>& C = F.blocks[b];
    if (F.has_time) C.mod = F.t_act * P.value(bs.mod_w).transpose() + P.value(bs.mod_b);

    C.q.resize(n, d);
    C.k.resize(n, d);
    C.v.resize(n, d);
    for (int e = 0; e < 2; ++e) {
      auto& E = C.expert[e];
      E.rows = F.expert_rows[e];
      if (E.rows.empty()) continue;
      const ExpertSlots& x = bs.expert[e];
      const Mat<T> xin = h(E.rows, Eigen::all);
      E.ln1 = layer_norm(xin);
      E.n1 = affine(E.ln1.xhat, P.value(x.ln1_g), P.value(x.ln1_b));
      if (e == 1) {
        E.m1 = (E.n1.array().rowwise() * (C.mod.segment(d, d).array() + static_cast<T>(1))).rowwise() +
               C.mod.segment(0, d).array();
      } else {
        E.m1 = E.n1;
      }
      C.q(E.rows, Eigen::all) = linear(E.m1, P.value(x.wq), P.value(x.bq));
      C.k(E.rows, Eigen::all) = linear(E.m1, P.value(x.wk), P.value(x.bk));
      C.v(E.rows, Eigen::all) = linear(E.m1, P.value(x.wv), P.value(x.bv));
    }

    C.o.resize(n, d);
    C.probs.resize(static_cast<std::size_t>(heads));
    for (int hd = 0; hd < heads; ++hd) {
      Mat<T> sc = (C.q.middleCols(hd * dh, dh) * C.k.middleCols(hd * dh, dh).transpose()) * scale + F.mask_add;
      const ColVec<T> mx = sc.rowwise().maxCoeff();
      sc = (sc.colwise() - mx).array().exp();
      const ColVec<T> sum = sc.rowwise().sum();
      sc = sc.array().colwise() / sum.array();
      C.o.middleCols(hd * dh, dh) = sc * C.v.middleCols(hd * dh, dh);
      C.probs[hd] = std::move(sc);
    }

    for (int e = 0; e < 2; ++e) {
      auto& E = C.expert[e];
      if (E.rows.empty()) continue;
      const ExpertSlots& x = bs.expert[e];
      h(E.rows, Eigen::all) += linear(Mat<T>(C.o(E.rows, Eigen::all)), P.value(x.wo), P.value(x.bo));
    }
    for (int e = 0; e < 2; ++e) {
      auto& E = C.expert[e];
      if (E.rows.empty()) continue;
      const ExpertSlots& x = bs.expert[e];
      const Mat<T> xin = h(E.rows, Eigen::all);
      E.ln2 = layer_norm(xin);
      E.n2 = affine(E.ln2.xhat, P.value(x.ln2_g), P.value(x.ln2_b));
      if (e == 1) {
        E.m2 = (E.n2.array().rowwise() * (C.mod.segment(3 * d, d).array() + static_cast<T>(1))).rowwise() +
               C.mod.segment(2 * d, d).array();
      } else {
        E.m2 = E.n2;
      }
      E.u = linear(E.m2, P.value(x.w1), P.value(x.b1));
      E.g = E.u.unaryExpr([](T v) { return gelu(v); });
      h(E.rows, Eigen::all) += linear(E.g, P.value(x.w2), P.value(x.b2));
    }
  }

  if (!F.text_rows.empty()) {
    F.text_ln = layer_norm(Mat<T>(h(F.text_rows, Eigen::all)));
    F.text_norm = affine(F.text_ln.xhat, P.value(L.norm_g), P.value(L.norm_b));
    F.logits = linear(F.text_norm, P.value(L.head_w), P.value(L.head_b));
  } else {
    F.logits.resize(0, cfg.vocab_size);
  }
  if (!F.latent_rows.empty()) {
    F.vmod = F.t_act * P.value(L.vmod_w).transpose() + P.value(L.vmod_b);
    F.latent_ln = layer_norm(Mat<T>(h(F.latent_rows, Eigen::all)));
    F.latent_mod_in = (F.latent_ln.xhat.array().rowwise() * (F.vmod.segment(d, d).array() + static_cast<T>(1))).rowwise() +
                      F.vmod.segment(0, d).array();
    F.velocity = linear(F.latent_mod_in, P.value(L.vel_w), P.value(L.vel_b));
  } else {
    F.velocity.resize(0, tdim);
  }
  return F;
}

namespace nn {

template <typename T>
void accumulate_linear(const Mat<T>& dy, const Mat<T>& x, Mat<T>& dw, Mat<T>& db) {
  dw.noalias() += dy.transpose() * x;
  db += dy.colwise().sum();
}

}  // namespace nn

/// Accumulates into `grads` the gradient of sum(dlogits .* logits) + sum(dvel .* velocity).
template <typename T>
void backward(const ParameterStore<T>& P, const TokenStream& s, const ForwardPass<T>& F, const Mat<T>& dlogits,
              const Mat<T>& dvel, ParameterStore<T>& grads) {
  using namespace nn;
  const ModelConfig& cfg = P.config();
  const Layout& L = P.layout();
  const int d = cfg.d_model, n = F.n;
  require(dlogits.rows() == static_cast<Eigen::Index>(F.text_rows.size()) &&
              dvel.rows() == static_cast<Eigen::Index>(F.latent_rows.size()),
          ErrorKind::ShapeMismatch, "output gradient shapes do not match the forward pass");
  auto G = [&](int slot) -> Mat<T>& { return grads.value(slot); };

  Mat<T> dh = Mat<T>::Zero(n, d);
  RowVec<T> dact = RowVec<T>::Zero(d);

  if (!F.text_rows.empty()) {
    accumulate_linear(dlogits, F.text_norm, G(L.head_w), G(L.head_b));
    const Mat<T> dnorm = dlogits * P.value(L.head_w);
    G(L.norm_g) += (dnorm.array() * F.text_ln.xhat.array()).matrix().colwise().sum();
    G(L.norm_b) += dnorm.colwise().sum();
    const Mat<T> dxhat = dnorm.array().rowwise() * P.value(L.norm_g).row(0).array();
    dh(F.text_rows, Eigen::all) += layer_norm_backward(dxhat, F.text_ln);
  }
  if (!F.latent_rows.empty()) {
    accumulate_linear(dvel, F.latent_mod_in, G(L.vel_w), G(L.vel_b));
    const Mat<T> dm = dvel * P.value(L.vel_w);
    RowVec<T> dvm(2 * d);
    dvm.segment(0, d) = dm.colwise().sum();
    dvm.segment(d, d) = (dm.array() * F.latent_ln.xhat.array()).matrix().colwise().sum();
    G(L.vmod_w).noalias() += dvm.transpose() * F.t_act;
    G(L.vmod_b) += dvm;
    dact.noalias() += dvm * P.value(L.vmod_w);
    const Mat<T> dxhat = dm.array().rowwise() * (F.vmod.segment(d, d).array() + static_cast<T>(1));
    dh(F.latent_rows, Eigen::all) += layer_norm_backward(dxhat, F.latent_ln);
  }

  const int heads = cfg.n_heads, dh_ = cfg.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh_)));
  for (int b = cfg.n_blocks - 1; b >= 0; --b) {
    const BlockSlots& bs = L.blocks[b];
    const BlockCache<T>& C = F.blocks[b];
    RowVec<T> dmod = RowVec<T>::Zero(4 * d);

    // Feed-forward, residual passes dh through unchanged.
    for (int e = 0; e < 2; ++e) {
      const auto& E = C.expert[e];
      if (E.rows.empty()) continue;
      const ExpertSlots& x = bs.expert[e];
      const Mat<T> dy = dh(E.rows, Eigen::all);
      accumulate_linear(dy, E.g, G(x.w2), G(x.b2));
      Mat<T> du = dy * P.value(x.w2);
      du = du.array() * E.u.unaryExpr([](T v) { return gelu_grad(v); }).array();
      accumulate_linear(du, E.m2, G(x.w1), G(x.b1));
      const Mat<T> dm2 = du * P.value(x.w1);
      Mat<T> dn2;
      if (e == 1) {
        dmod.segment(2 * d, d) += dm2.colwise().sum();
        dmod.segment(3 * d, d) += (dm2.array() * E.n2.array()).matrix().colwise().sum();
        dn2 = dm2.array().rowwise() * (C.mod.segment(3 * d, d).array() + static_cast<T>(1));
      } else {
        dn2 = dm2;
      }
      G(x.ln2_g) += (dn2.array() * E.ln2.xhat.array()).matrix().colwise().sum();
      G(x.ln2_b) += dn2.colwise().sum();
      const Mat<T> dxhat = dn2.array().rowwise() * P.value(x.ln2_g).row(0).array();
      dh(E.rows, Eigen::all) += layer_norm_backward(dxhat, E.ln2);
    }

    // Attention output projection.
    Mat<T> dout = Mat<T>::Zero(n, d);
    for (int e = 0; e < 2; ++e) {
      const auto& E = C.expert[e];
      if (E.rows.empty()) continue;
      const ExpertSlots& x = bs.expert[e];
      const Mat<T> dy = dh(E.rows, Eigen::all);
      accumulate_linear(dy, Mat<T>(C.o(E.rows, Eigen::all)), G(x.wo), G(x.bo));
      dout(E.rows, Eigen::all) = dy * P.value(x.wo);
    }

    // Joint softmax attention.
    Mat<T> dq(n, d), dk(n, d), dv(n, d);
    for (int hd = 0; hd < heads; ++hd) {
      const Mat<T>& pr = C.probs[hd];
      const auto doh = dout.middleCols(hd * dh_, dh_);
      dv.middleCols(hd * dh_, dh_).noalias() = pr.transpose() * doh;
      Mat<T> dp = doh * C.v.middleCols(hd * dh_, dh_).transpose();
      const ColVec<T> rs = (dp.array() * pr.array()).rowwise().sum();
      dp = pr.array() * (dp.colwise() - rs).array();
      dq.middleCols(hd * dh_, dh_).noalias() = dp * C.k.middleCols(hd * dh_, dh_) * scale;
      dk.middleCols(hd * dh_, dh_).noalias() = dp.transpose() * C.q.middleCols(hd * dh_, dh_) * scale;
    }

    for (int e = 0; e < 2; ++e) {
      const auto& E = C.expert[e];
      if (E.rows.empty()) continue;
      const ExpertSlots& x = bs.expert[e];
      const Mat<T> dqe = dq(E.rows, Eigen::all), dke = dk(E.rows, Eigen::all), dve = dv(E.rows, Eigen::all);
      accumulate_linear(dqe, E.m1, G(x.wq), G(x.bq));
      accumulate_linear(dke, E.m1, G(x.wk), G(x.bk));
      accumulate_linear(dve, E.m1, G(x.wv), G(x.bv));
      Mat<T> dm1 = dqe * P.value(x.wq);
      dm1.noalias() += dke * P.value(x.wk);
      dm1.noalias() += dve * P.value(x.wv);
      Mat<T> dn1;
      if (e == 1) {
        dmod.segment(0, d) += dm1.colwise().sum();
        dmod.segment(d, d) += (dm1.array() * E.n1.array()).matrix().colwise().sum();
        dn1 = dm1.array().rowwise() * (C.mod.segment(d, d).array() + static_cast<T>(1));
      } else {
        dn1 = dm1;
      }
      G(x.ln1_g) += (dn1.array() * E.ln1.xhat.array()).matrix().colwise().sum();
      G(x.ln1_b) += dn1.colwise().sum();
      const Mat<T> dxhat = dn1.array().rowwise() * P.value(x.ln1_g).row(0).array();
      dh(E.rows, Eigen::all) += layer_norm_backward(dxhat, E.ln1);
    }

    if (F.has_time && !C.expert[1].rows.empty()) {
      G(bs.mod_w).noalias() += dmod.transpose() * F.t_act;
      G(bs.mod_b) += dmod;
      dact.noalias() += dmod * P.value(bs.mod_w);
    }
  }

  // Embeddings.
  for (int r : F.text_rows) {
    const Token& tok = s.tokens[r];
    if (tok.nulled) G(L.null_text).row(0) += dh.row(r);
    else G(L.text_table).row(tok.id) += dh.row(r);
  }
  auto embed_grad = [&](const std::vector<int>& rows, const Mat<T>& input, int w, int bias, int null_slot) {
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const int r = rows[k];
      if (s.tokens[r].nulled) {
        G(null_slot).row(0) += dh.row(r);
      } else {
        G(w).noalias() += dh.row(r).transpose() * input.row(static_cast<Eigen::Index>(k));
        G(bias).row(0) += dh.row(r);
      }
    }
  };
  embed_grad(F.vision_rows, F.vision_in, L.vis_w, L.vis_b, L.null_vit);
  embed_grad(F.latent_rows, F.latent_in, L.lat_w, L.lat_b, L.null_lat);

  if (F.has_time) {
    const RowVec<T> demb = dact.array() * F.t_emb.unaryExpr([](T v) { return silu_grad(v); }).array();
    G(L.time_w2).noalias() += demb.transpose() * F.t_hidden;
    G(L.time_b2) += demb;
    const RowVec<T> dhid = demb * P.value(L.time_w2);
    const RowVec<T> dpre = dhid.array() * F.t_pre.unaryExpr([](T v) { return silu_grad(v); }).array();
    G(L.time_w1).noalias() += dpre.transpose() * F.t_feat;
    G(L.time_b1) += dpre;
  }
}

}  // namespace motir
