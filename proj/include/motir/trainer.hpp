#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "motir/corpus.hpp"
#include "motir/error.hpp"
#include "motir/objectives.hpp"
#include "motir/params.hpp"
#include "motir/rng.hpp"
#include "motir/stream.hpp"

namespace motir {

using GroupSet = std::set<Group>;

inline std::string to_string(LossMode m) { return m == LossMode::RfOnly ? "rf_only" : "combined"; }

inline LossMode parse_loss_mode(std::string_view s) {
  if (s == "rf_only") return LossMode::RfOnly;
  if (s == "combined") return LossMode::Combined;
  fail(ErrorKind::InvalidArgument, "unknown loss mode '" + std::string(s) + "'");
}

struct RecipePhase {
  std::string name;
  int steps = 0;
  int warmup_steps = 0;
  double ema_ratio = 0.995;
  double lr = 2e-5;
  MixRatios ratios;
  GroupSet trainable;
  LossMode loss_mode = LossMode::RfOnly;

  void validate() const {
    require(steps >= 1, ErrorKind::InvalidArgument, "phase " + name + ": steps must be >= 1");
    require(warmup_steps >= 0 && warmup_steps <= steps, ErrorKind::InvalidArgument,
            "phase " + name + ": warmup_steps must lie in [0, steps]");
    require(ema_ratio >= 0.0 && ema_ratio <= 1.0, ErrorKind::InvalidArgument, "phase " + name + ": ema_ratio outside [0,1]");
    require(lr > 0.0 && std::isfinite(lr), ErrorKind::InvalidArgument, "phase " + name + ": lr must be positive");
    require(!trainable.empty(), ErrorKind::InvalidArgument, "phase " + name + ": no trainable groups");
    double sum = 0.0;
    for (const auto& [p, r] : ratios) {
      require(r >= 0.0, ErrorKind::InvalidArgument, "phase " + name + ": negative ratio");
      sum += r;
    }
    require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::InvalidArgument, "phase " + name + ": ratios must sum to 1");
  }

  friend bool operator==(const RecipePhase&, const RecipePhase&) = default;
};

struct OptimizerSettings {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-15;
  double weight_decay = 0.0;
  double clip_norm = 1.0;

  friend bool operator==(const OptimizerSettings&, const OptimizerSettings&) = default;
};

struct Recipe {
  std::vector<RecipePhase> phases;
  OptimizerSettings optimizer;
  LossConfig loss;

  void validate() const {
    require(!phases.empty(), ErrorKind::InvalidArgument, "recipe has no phases");
    for (const auto& p : phases) p.validate();
    loss.validate();
    require(optimizer.clip_norm > 0.0, ErrorKind::InvalidArgument, "clip norm must be positive");
  }

  std::int64_t total_steps() const {
    std::int64_t n = 0;
    for (const auto& p : phases) n += p.steps;
    return n;
  }
};

inline GroupSet restoration_groups() { return {Group::ResExpert, Group::VelocityHead, Group::TimeEmbed}; }

inline GroupSet all_but_token_table() {
  GroupSet g(kAllGroups.begin(), kAllGroups.end());
  g.erase(Group::TextEmbed);
  return g;
}

/// The four-phase curriculum with the published constants.
inline Recipe default_recipe() {
  Recipe r;
  auto stage1 = [](std::string name, int steps, double ema, Partition p) {
    RecipePhase ph;
    ph.name = std::move(name);
    ph.steps = steps;
    ph.warmup_steps = 250;
    ph.ema_ratio = ema;
    ph.lr = 2e-5;
    ph.ratios = {{p, 1.0}};
    ph.trainable = restoration_groups();
    ph.loss_mode = LossMode::RfOnly;
    return ph;
  };
  r.phases.push_back(stage1("single", 10000, 0.990, Partition::Single));
  r.phases.push_back(stage1("multi", 20000, 0.995, Partition::Multi));
  r.phases.push_back(stage1("high_order", 1500, 0.995, Partition::HighOrder));
  RecipePhase uni;
  uni.name = "unified";
  uni.steps = 10000;
  uni.warmup_steps = 500;
  uni.ema_ratio = 0.995;
  uni.lr = 2e-5;
  uni.ratios = {{Partition::Iqa, 0.25},
                {Partition::Single, 0.05},
                {Partition::Multi, 0.1},
                {Partition::HighOrder, 0.2},
                {Partition::Interleaved, 0.4}};
  uni.trainable = all_but_token_table();
  uni.loss_mode = LossMode::Combined;
  r.phases.push_back(uni);
  return r;
}

/// Collapses a curriculum into one mixed phase with the same total step budget:
/// step-weighted ratios, union of trainable groups, combined loss if any phase used it.
inline Recipe all_in_one(const Recipe& src) {
  src.validate();
  RecipePhase one;
  one.name = "all_in_one";
  one.loss_mode = LossMode::RfOnly;
  const double total = static_cast<double>(src.total_steps());
  for (const auto& p : src.phases) {
    one.steps += p.steps;
    one.warmup_steps = std::max(one.warmup_steps, p.warmup_steps);
    for (const auto& [part, r] : p.ratios) one.ratios[part] += r * p.steps / total;
    one.trainable.insert(p.trainable.begin(), p.trainable.end());
    if (p.loss_mode == LossMode::Combined) one.loss_mode = LossMode::Combined;
  }
  one.ema_ratio = src.phases.back().ema_ratio;
  one.lr = src.phases.back().lr;
  Recipe out = src;
  out.phases = {one};
  return out;
}

// ---------------------------------------------------------------------------
// Training state

template <typename T>
struct TrainState {
  Recipe recipe;
  ParameterStore<T> params;
  ParameterStore<T> ema;
  ParameterStore<T> m;
  ParameterStore<T> v;
  std::uint64_t seed = 0;
  int phase = 0;
  int step = 0;  // completed steps in the current phase
  std::int64_t global_step = 0;
  CounterRng loss_rng;  // dropout, timesteps, noise
  CounterRng data_rng;  // mixer draws

  const RecipePhase& current() const { return recipe.phases.at(static_cast<std::size_t>(phase)); }
  bool phase_complete() const { return step >= current().steps; }
  bool finished() const { return phase + 1 == static_cast<int>(recipe.phases.size()) && phase_complete(); }
};

inline CounterRng phase_data_rng(std::uint64_t seed, int phase) {
  return CounterRng(derive_seed(seed, 0xDA7Au, static_cast<std::uint64_t>(phase)));
}

template <typename T>
TrainState<T> init_train_state(const Recipe& recipe, const ModelConfig& cfg, std::uint64_t seed) {
  recipe.validate();
  TrainState<T> s;
  s.recipe = recipe;
  s.seed = seed;
  s.params = init_params<T>(cfg, derive_seed(seed, 0x1417u));
  s.ema = s.params;
  s.m = s.params.zeros_like();
  s.v = s.params.zeros_like();
  s.loss_rng = CounterRng(derive_seed(seed, 0x1055u));
  s.data_rng = phase_data_rng(seed, 0);
  return s;
}

/// Linear warmup then constant; `step` is 1-based.
inline double learning_rate(const RecipePhase& p, int step) {
  if (p.warmup_steps == 0) return p.lr;
  return p.lr * std::min(1.0, static_cast<double>(step) / p.warmup_steps);
}

/// Next phase: moments reset, warmup restarts, mixer re-seeded, trainable set switched.
template <typename T>
void advance_phase(TrainState<T>& s) {
  require(s.phase + 1 < static_cast<int>(s.recipe.phases.size()), ErrorKind::State,
          "cannot advance past the final phase '" + s.current().name + "'");
  ++s.phase;
  s.step = 0;
  for (auto& t : s.m) t.value.setZero();
  for (auto& t : s.v) t.value.setZero();
  s.data_rng = phase_data_rng(s.seed, s.phase);
}

struct StepMetrics {
  std::int64_t step = 0;  // global, 1-based
  std::string phase;
  double loss_rf = 0.0;
  double loss_ar = 0.0;
  double loss_total = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
};

inline std::string to_json_line(const StepMetrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"step\":" << m.step << ",\"phase\":\"" << m.phase << "\",\"loss_rf\":" << m.loss_rf
     << ",\"loss_ar\":" << m.loss_ar << ",\"loss_total\":" << m.loss_total << ",\"lr\":" << m.lr
     << ",\"grad_norm\":" << m.grad_norm << "}";
  return os.str();
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_global_norm(ParameterStore<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& t : grads) sq += t.value.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& t : grads) t.value *= scale;
  }
  return norm;
}

/// Decoupled-weight-decay Adam on trainable tensors; `step` is 1-based within the phase.
template <typename T>
void adamw_update(ParameterStore<T>& params, ParameterStore<T>& m, ParameterStore<T>& v, const ParameterStore<T>& grads,
                  const GroupSet& trainable, const OptimizerSettings& o, double lr, int step) {
  const double bc1 = 1.0 - std::pow(o.beta1, step);
  const double bc2 = 1.0 - std::pow(o.beta2, step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable.contains(params[i].group)) continue;
    auto& p = params[i].value;
    auto& mi = m[i].value;
    auto& vi = v[i].value;
    const auto& g = grads[i].value;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double gk = g.data()[k];
      const double mk = o.beta1 * mi.data()[k] + (1.0 - o.beta1) * gk;
      const double vk = o.beta2 * vi.data()[k] + (1.0 - o.beta2) * gk * gk;
      mi.data()[k] = static_cast<T>(mk);
      vi.data()[k] = static_cast<T>(vk);
      double pk = p.data()[k];
      pk -= lr * o.weight_decay * pk;
      pk -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + o.eps);
      p.data()[k] = static_cast<T>(pk);
    }
  }
}

/// shadow = ratio * shadow + (1 - ratio) * param, trainable tensors only.
template <typename T>
void ema_update(ParameterStore<T>& shadow, const ParameterStore<T>& params, const GroupSet& trainable, double ratio) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable.contains(params[i].group)) continue;
    auto& s = shadow[i].value;
    const auto& p = params[i].value;
    for (Eigen::Index k = 0; k < s.size(); ++k)
      s.data()[k] = static_cast<T>(ratio * s.data()[k] + (1.0 - ratio) * p.data()[k]);
  }
}

/// One optimizer step of the current phase on `batch`.
template <typename T>
StepMetrics train_step(TrainState<T>& s, const std::vector<TokenStream>& batch) {
  require(!s.phase_complete(), ErrorKind::State, "phase '" + s.current().name + "' already complete; advance first");
  const RecipePhase& ph = s.current();
  auto grads = s.params.zeros_like();
  const auto loss = combined_loss(s.params, batch, s.recipe.loss, ph.loss_mode, s.loss_rng, &grads);

  StepMetrics out;
  out.step = s.global_step + 1;
  out.phase = ph.name;
  out.loss_rf = loss.rf;
  out.loss_ar = loss.ar;
  out.loss_total = loss.total;
  out.lr = learning_rate(ph, s.step + 1);

  auto diagnostics = [&] {
    std::ostringstream os;
    os << "step " << out.step << " phase " << ph.name << " loss_rf=" << loss.rf << " loss_ar=" << loss.ar
       << " loss_total=" << loss.total;
    return os.str();
  };
  require(std::isfinite(loss.total) && std::isfinite(loss.rf) && std::isfinite(loss.ar), ErrorKind::NonFinite,
          "non-finite loss at " + diagnostics());

  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!ph.trainable.contains(grads[i].group)) grads[i].value.setZero();
  out.grad_norm = clip_global_norm(grads, s.recipe.optimizer.clip_norm);
  require(std::isfinite(out.grad_norm), ErrorKind::NonFinite, "non-finite gradient norm at " + diagnostics());

  adamw_update(s.params, s.m, s.v, grads, ph.trainable, s.recipe.optimizer, out.lr, s.step + 1);
  ema_update(s.ema, s.params, ph.trainable, ph.ema_ratio);
  ++s.step;
  ++s.global_step;
  return out;
}

/// Draws `batch_size` samples from the current phase's mixture and builds their streams.
template <typename T>
std::vector<TokenStream> draw_batch(TrainState<T>& s, const Corpus& corpus, int batch_size, const StreamOptions& opt) {
  require(batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be >= 1");
  Mixer mixer(corpus, s.current().ratios, 0);
  mixer.set_rng(s.data_rng);
  std::vector<TokenStream> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) batch.push_back(build_stream(mixer.next(), opt));
  s.data_rng = mixer.rng();
  return batch;
}

template <typename T>
struct RunHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const TrainState<T>&)> on_checkpoint;  // every `checkpoint_every` steps and at phase ends
  int checkpoint_every = 0;
  std::int64_t stop_after = -1;  // global step at which to return early (interruption)
};

/// Runs the recipe from the current state to completion (or `stop_after`).
template <typename T>
void run_recipe(TrainState<T>& s, const Corpus& corpus, int batch_size, const StreamOptions& opt,
                const RunHooks<T>& hooks = {}) {
  while (true) {
    if (s.phase_complete()) {
      if (s.finished()) return;
      advance_phase(s);
    }
    if (hooks.stop_after >= 0 && s.global_step >= hooks.stop_after) return;
    const auto batch = draw_batch(s, corpus, batch_size, opt);
    const auto m = train_step(s, batch);
    if (hooks.on_step) hooks.on_step(m);
    const bool periodic = hooks.checkpoint_every > 0 && s.global_step % hooks.checkpoint_every == 0;
    if (hooks.on_checkpoint && (periodic || s.phase_complete())) hooks.on_checkpoint(s);
  }
}

}  // namespace motir
