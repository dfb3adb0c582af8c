// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "motir/cli.hpp"
#include "test_util.hpp"

namespace motir {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  auto params = init_params<double>(testing::tiny_config(), 3);
  testing::scramble(params, 11);
  CounterRng data(5);
  const StreamOptions opt{4, 128};
  const std::vector<TokenStream> batch = {build_stream(testing::tiny_interleaved(data), opt),
                                          build_stream(testing::tiny_score(data), opt),
                                          build_stream(testing::tiny_restore(data), opt)};
  LossConfig cfg;
  cfg.drop_text = cfg.drop_vit = 0.5;
  auto loss = [&] {
    CounterRng rng(99);
    return combined_loss(params, batch, cfg, LossMode::Combined, rng).total;
  };
  auto grads = params.zeros_like();
  CounterRng rng(99);
  combined_loss(params, batch, cfg, LossMode::Combined, rng, &grads);
  const auto r = testing::finite_difference_check(params, grads, loss);
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << params.parameter_count() << " params, max rel err " << r.max_rel_error << ", " << fmt("%.1f s", secs);
  return {params.parameter_count() <= 5000 && r.max_rel_error < 1e-4 && secs < 120.0, os.str()};
}

Outcome loss_masking() {
  const StreamOptions opt{4, 128};
  CounterRng rng(2);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    TrainingSample sample = trial % 2 ? testing::tiny_score(rng) : testing::tiny_interleaved(rng);
    TokenStream s = build_stream(sample, opt);
    const auto rows = text_positions(s);
    Mat<double> logits(static_cast<Eigen::Index>(rows.size()), vocab::kSize);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = 3.0 * rng.normal();
    const double base = ar_loss(logits, rows, s);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (!s.tokens[rows[k]].is_condition) continue;
      for (Eigen::Index c = 0; c < logits.cols(); ++c) logits(static_cast<Eigen::Index>(k), c) = 50.0 * rng.normal();
      s.tokens[rows[k]].id = static_cast<int>(rng.below(vocab::kSize));
    }
    if (ar_loss(logits, rows, s) != base) return {false, "stream " + std::to_string(trial) + " changed"};
    ++checked;
  }
  return {true, std::to_string(checked) + " streams, change exactly 0"};
}

Outcome freezing_soundness() {
  CorpusConfig cc;
  cc.counts = {{Partition::Single, 16}};
  const Corpus corpus = synthesize_corpus(cc);
  auto s = init_train_state<float>(default_recipe(), ModelConfig{}, 5);
  const auto init = s.params;
  for (int i = 0; i < 50; ++i) train_step(s, draw_batch(s, corpus, 2, StreamOptions{}));
  std::map<Group, double> delta;
  for (std::size_t i = 0; i < s.params.size(); ++i)
    delta[s.params[i].group] += (s.params[i].value - init[i].value).template cast<double>().cwiseAbs().sum();
  bool ok = delta[Group::ResExpert] > 0.0;
  std::ostringstream os;
  for (Group g : {Group::IqaExpert, Group::VisionEncoder, Group::TextEmbed, Group::TextHead}) {
    ok = ok && delta[g] == 0.0;
    os << to_string(g) << "=" << delta[g] << " ";
  }
  os << "res_expert=" << delta[Group::ResExpert];
  return {ok, os.str()};
}

Outcome hyperparameter_fidelity() {
  struct Row {
    const char* name;
    int steps, warmup;
    double ema;
  };
  const Row table[] = {{"single", 10000, 250, 0.990},
                       {"multi", 20000, 250, 0.995},
                       {"high_order", 1500, 250, 0.995},
                       {"unified", 10000, 500, 0.995}};
  const MixRatios unified = {{Partition::Iqa, 0.25},
                             {Partition::Single, 0.05},
                             {Partition::Multi, 0.1},
                             {Partition::HighOrder, 0.2},
                             {Partition::Interleaved, 0.4}};
  const Recipe r = default_recipe();
  std::vector<std::string> bad;
  if (r.phases.size() != 4) return {false, "phase count " + std::to_string(r.phases.size())};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& p = r.phases[i];
    if (p.name != table[i].name || p.steps != table[i].steps || p.warmup_steps != table[i].warmup ||
        p.ema_ratio != table[i].ema || p.lr != 2e-5)
      bad.push_back("phase " + std::to_string(i));
  }
  if (r.optimizer.clip_norm != 1.0) bad.push_back("clip");
  if (r.loss.lambda != 0.25) bad.push_back("lambda");
  if (r.loss.shift != 4.0) bad.push_back("shift");
  if (r.phases[3].ratios != unified) bad.push_back("ratios");
  std::string d;
  for (const auto& b : bad) d += b + " ";
  return {bad.empty(), bad.empty() ? "all constants equal" : "mismatch: " + d};
}

/// 16 blur+noise pairs at 32x32, restoration trained on every group.
Outcome restoration_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  CounterRng rng(7);
  const SynthesisRanges ranges;
  std::vector<TrainingSample> pairs;
  for (int i = 0; i < 16; ++i) {
    const Image hq = procedural_image(rng, 32, 32);
    const auto blur = ranges.sample(DegradationKind::Blur, rng, 0);
    const auto noise = ranges.sample(DegradationKind::Noise, rng, static_cast<std::uint64_t>(i + 1));
    pairs.push_back(make_restore_sample(hq, {blur, noise}, Partition::Multi));
  }
  RecipePhase ph;
  ph.name = "overfit";
  ph.steps = 2000;
  ph.warmup_steps = 100;
  ph.ema_ratio = 0.99;
  ph.lr = 2e-3;
  ph.loss_mode = LossMode::RfOnly;
  ph.ratios = {{Partition::Multi, 1.0}};
  ph.trainable = all_but_token_table();
  Recipe recipe;
  recipe.phases = {ph};
  auto state = init_train_state<float>(recipe, ModelConfig{}, 3);
  run_recipe(state, Corpus{{Partition::Multi, pairs}}, 16, StreamOptions{});

  SampleConfig sc;
  sc.seed = 1;
  double in = 0.0, out = 0.0;
  for (const auto& p : pairs) {
    const Image& lq = *p.input_images()[0];
    const Image& hq = *p.target_images()[0];
    const Image restored = sample_image(state.ema, restore_stream(p.instruction(), lq, std::nullopt, {}), sc);
    in += psnr_y(lq, hq);
    out += psnr_y(restored, hq);
  }
  in /= 16.0;
  out /= 16.0;
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << fmt("input %.2f dB", in) << fmt(", restored %.2f dB", out) << fmt(", gain %.2f dB", out - in)
     << fmt(", %.0f s", secs);
  return {out - in >= 5.0 && secs < 1800.0, os.str()};
}

/// 32 scoring samples, unified-stage training, greedy decoding.
Outcome iqa_overfit() {
  CorpusConfig cc;
  cc.seed = 21;
  cc.counts = {{Partition::Iqa, 32}};
  cc.iqa_kinds = {IqaKind::Score};
  const Corpus corpus = synthesize_corpus(cc);

  RecipePhase ph = default_recipe().phases[3];
  ph.steps = 2000;
  ph.warmup_steps = 100;
  ph.lr = 2e-3;
  ph.ratios = {{Partition::Iqa, 1.0}};
  Recipe recipe = default_recipe();
  recipe.phases = {ph};
  auto state = init_train_state<float>(recipe, ModelConfig{}, 3);
  run_recipe(state, corpus, 8, StreamOptions{});

  SampleConfig sc;
  sc.text_max_len = 40;
  std::vector<double> pred, truth;
  for (const auto& s : corpus.at(Partition::Iqa)) {
    TaskInputs in;
    in.images = {*s.input_images()[0]};
    in.instruction = s.instruction();
    const auto text = run_task(state.ema, InferTask::Iqa, in, sc).text;
    if (const auto score = parse_score(*text)) {
      pred.push_back(*score);
      truth.push_back(*s.score);
    }
  }
  const double parsed = pred.size() / 32.0;
  double srcc = std::numeric_limits<double>::quiet_NaN();
  if (pred.size() >= 2) {
    try {
      srcc = correlations(pred, truth).srcc;
    } catch (const Error&) {
    }
  }
  std::ostringstream os;
  os << fmt("parsed %.3f", parsed) << fmt(", srcc %.4f", srcc);
  return {parsed >= 0.9 && srcc >= 0.9, os.str()};
}

Outcome metric_goldens() {
  const double psnr = psnr_y(Image(16, 16, 100.0f / 255.0f), Image(16, 16, 101.0f / 255.0f));
  CounterRng rng(3);
  const Image x = testing::random_image(rng, 24, 24);
  const double ssim = ssim_y(x, x);
  const auto c1 = correlations({1, 3, 2, 4}, {1, 2, 3, 4});
  const auto c2 = correlations({10, 20, 30}, {1, 2, 3});
  const double srcc_rev = correlations({3, 2, 1}, {1, 2, 3}).srcc;
  const bool ok = std::abs(psnr - 48.1308) <= 1e-3 && ssim == 1.0 && std::abs(c1.srcc - 0.8) <= 1e-9 &&
                  std::abs(c1.plcc - 0.8) <= 1e-9 && std::abs(c2.plcc - 1.0) <= 1e-9 &&
                  std::abs(c2.srcc - 1.0) <= 1e-9 && std::abs(srcc_rev + 1.0) <= 1e-9;
  std::ostringstream os;
  os.precision(10);
  os << "psnr " << psnr << ", ssim " << ssim << ", srcc " << c1.srcc << ", plcc " << c1.plcc;
  return {ok, os.str()};
}

Outcome mixer_ratios() {
  CorpusConfig cc;
  cc.image_size = 8;
  for (auto& [p, n] : cc.counts) n = 4;
  const Corpus corpus = synthesize_corpus(cc);
  const MixRatios ratios = default_recipe().phases[3].ratios;
  Mixer m(corpus, ratios, 31);
  std::map<Partition, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[m.next().partition];
  bool ok = true;
  std::ostringstream os;
  for (const auto& [p, r] : ratios) {
    const double f = counts[p] / static_cast<double>(n);
    ok = ok && std::abs(f - r) <= 0.02;
    os << to_string(p) << "=" << fmt("%.4f ", f);
  }
  return {ok, os.str()};
}

Outcome cfg_algebra() {
  auto params = init_params<double>(testing::tiny_train_config(), 1);
  testing::scramble(params, 101);
  CounterRng rng(2);
  const TokenStream s = restore_stream("enhance", testing::random_image(rng, 8, 8), std::nullopt, testing::kTinyStreams);
  const auto model = velocity_model(params);
  auto single_branch = [&](TokenStream st, const SampleConfig& cfg) {
    CounterRng noise(derive_seed(cfg.seed, 0x1A7Eu));
    Mat<double> z(static_cast<Eigen::Index>(st.response_latents().size()), 48);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = noise.normal();
    for (int k = 0; k < cfg.n_steps; ++k) {
      set_response_latents(st, z);
      z = z + (1.0 / cfg.n_steps) * model(st, static_cast<double>(k) / cfg.n_steps);
    }
    return z;
  };
  auto rel = [](const Mat<double>& a, const Mat<double>& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
  };
  SampleConfig cfg;
  cfg.n_steps = 8;
  cfg.seed = 4;
  cfg.cfg_scale = 1.0;
  const double r1 = rel(integrate_flow(model, s, cfg), single_branch(s, cfg));
  cfg.cfg_scale = 0.0;
  const double r0 = rel(integrate_flow(model, s, cfg), single_branch(unconditional(s), cfg));
  std::ostringstream os;
  os << "scale 1 rel " << r1 << ", scale 0 rel " << r0;
  return {r1 < 1e-6 && r0 < 1e-6, os.str()};
}

Outcome cfg_dropout_rate() {
  CounterRng rng(10), data(11);
  StreamBuilder b(StreamOptions{4, 128});
  b.text("fix", true);
  b.input_image(testing::random_image(data, 8, 8));
  b.latents(encode(testing::random_image(data, 8, 8), 4), true);
  b.latents(encode(testing::random_image(data, 8, 8), 4), false);
  const TokenStream base = b.finish();
  const LossConfig cfg;
  int text = 0, vit = 0, clean = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    TokenStream s = base;
    const auto d = cfg_dropout(s, cfg, rng);
    text += d.text;
    vit += d.vit;
    clean += d.cleanvae;
  }
  bool ok = true;
  for (int c : {text, vit, clean}) ok = ok && c >= 0.08 * n && c <= 0.12 * n;
  std::ostringstream os;
  os << fmt("text %.4f", text / double(n)) << fmt(", vit %.4f", vit / double(n))
     << fmt(", clean_vae %.4f", clean / double(n));
  return {ok, os.str()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MOTIR_CLI_BINARY) + " " + args + " >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// synth-data, a 200-step desk run and one restoration, twice.
Outcome end_to_end_determinism() {
  const fs::path root = fs::temp_directory_path() / "motir_acceptance_e2e";
  fs::remove_all(root);
  const std::string common =
      "--seed 5 --set data.count.iqa=16 --set data.count.single=16 --set data.count.multi=16 "
      "--set data.count.high_order=16 --set data.count.interleaved=16 --set train.desk.steps=50,80,20,50 "
      "--set train.desk.warmup=10,10,10,10 --set sample.steps=16";
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    const std::string base = common + " --set data.dir=" + (dir / "data").string();
    if (run_cli(base + " synth-data") != 0) return {false, "synth-data failed"};
    if (run_cli(base + " train --recipe desk --out " + (dir / "run").string()) != 0) return {false, "train failed"};
    if (run_cli(base + " infer --task restore --in " + (dir / "data" / "single" / "00000_lq.png").string() +
                " --checkpoint " + (dir / "run" / "checkpoint.bin").string() + " --out " +
                (dir / "out" / "restored.png").string()) != 0)
      return {false, "infer failed"};
  }
  std::vector<std::string> differ;
  for (const char* rel : {"data/manifest.jsonl", "run/train_log.jsonl", "out/restored.png", "run/checkpoint.bin"})
    if (read_bytes(root / "a" / rel) != read_bytes(root / "b" / rel) || read_bytes(root / "a" / rel).empty())
      differ.push_back(rel);
  int lines = 0;
  std::ifstream log(root / "a" / "run" / "train_log.jsonl");
  for (std::string l; std::getline(log, l);) ++lines;
  fs::remove_all(root);
  if (!differ.empty()) return {false, "differs: " + differ.front()};
  return {lines == 200, std::to_string(lines) + " trace lines; manifest, trace, checkpoint and PNG byte-identical"};
}

/// Desk data and recipe; progressive curriculum versus one mixed phase.
Outcome curriculum_vs_mixed() {
  const Config desk = Config::defaults();
  const Recipe curriculum = recipe_from_config(desk);
  const Recipe mixed = all_in_one(curriculum);
  const int batch = static_cast<int>(desk.get_int("train.batch_size"));
  const StreamOptions so = stream_options(desk);
  int wins = 0;
  std::ostringstream os;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CorpusConfig cc = corpus_config(desk);
    cc.seed = seed;
    const Corpus corpus = synthesize_corpus(cc);
    std::vector<TokenStream> val;
    for (int i = 0; i < 32; ++i) val.push_back(build_stream(synthesize_sample(cc, Partition::HighOrder, 1000 + i), so));
    auto val_loss = [&](const ParameterStore<float>& p) {
      double sum = 0.0;
      CounterRng rng(derive_seed(seed, 0x7A1u));
      for (int rep = 0; rep < 4; ++rep)
        sum += combined_loss(p, val, curriculum.loss, LossMode::RfOnly, rng, static_cast<ParameterStore<float>*>(nullptr),
                             false).rf;
      return sum / 4.0;
    };
    auto a = init_train_state<float>(curriculum, model_config(desk), seed);
    run_recipe(a, corpus, batch, so);
    auto b = init_train_state<float>(mixed, model_config(desk), seed);
    run_recipe(b, corpus, batch, so);
    const double la = val_loss(a.ema), lb = val_loss(b.ema);
    wins += la <= lb;
    os << "seed " << seed << fmt(" %.4f", la) << fmt(" vs %.4f; ", lb);
  }
  os << wins << "/5 curriculum <= mixed";
  return {wins >= 3, os.str()};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace motir

int main(int argc, char** argv) {
  using namespace motir;
  const std::vector<Criterion> all = {
      {1, "gradient correctness", gradient_correctness},
      {2, "loss masking exactness", loss_masking},
      {3, "freezing soundness", freezing_soundness},
      {4, "hyperparameter fidelity", hyperparameter_fidelity},
      {5, "restoration overfit trend", restoration_overfit},
      {6, "iqa overfit trend", iqa_overfit},
      {7, "metric goldens", metric_goldens},
      {8, "mixer ratios", mixer_ratios},
      {9, "cfg algebra", cfg_algebra},
      {10, "cfg dropout rate", cfg_dropout_rate},
      {11, "end-to-end determinism", end_to_end_determinism},
      {12, "curriculum vs mixed trend", curriculum_vs_mixed},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s: %s (%s) [%.1f s]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
