#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motir/checkpoint.hpp"
#include "motir/config.hpp"
#include "motir/manifest.hpp"
#include "motir/metrics.hpp"
#include "motir/png_io.hpp"
#include "motir/sampler.hpp"
#include "motir/trainer.hpp"

namespace motir::cli {

namespace fs = std::filesystem;

inline void echo_config(const Config& c, const fs::path& dir, const std::string& name = "config.resolved") {
  fs::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot write " + (dir / name).string());
  out << c.dump();
}

inline fs::path manifest_path(const Config& c) { return fs::path(c.get("data.dir")) / "manifest.jsonl"; }

// ---------------------------------------------------------------------------
// synth-data

/// Writes <data.dir>/<partition>/NNNNN_{lq,hq,a,b}.png and <data.dir>/manifest.jsonl.
inline std::vector<ManifestRecord> synth_data(const Config& c, std::ostream& log) {
  const CorpusConfig cc = corpus_config(c);
  const fs::path root = c.get("data.dir");
  fs::create_directories(root);
  std::vector<ManifestRecord> records;
  for (const auto& [partition, count] : cc.counts) {
    require(count >= 0, ErrorKind::InvalidArgument, "negative sample count for " + std::string(to_string(partition)));
    for (int i = 0; i < count; ++i) records.push_back(write_sample(root, synthesize_sample(cc, partition, i), i));
    log << "synth-data: " << to_string(partition) << " " << count << "\n";
  }
  require(!records.empty(), ErrorKind::InvalidArgument, "synth-data: configuration selects no samples");
  write_manifest(root / "manifest.jsonl", records);
  echo_config(c, root);
  return records;
}

// ---------------------------------------------------------------------------
// train

inline std::string phase_plan(const Recipe& r) {
  std::string out;
  for (const auto& p : r.phases) out += (out.empty() ? "" : "/") + std::to_string(p.steps);
  return out;
}

inline fs::path checkpoint_path(const Config& c) { return fs::path(c.get("train.out")) / "checkpoint.bin"; }
inline fs::path log_path(const Config& c) { return fs::path(c.get("train.out")) / "train_log.jsonl"; }

struct TrainOptions {
  bool resume = false;
  std::int64_t stop_after = -1;  // stop (after checkpointing) at this global step
};

/// Runs the configured recipe. The log holds one JSON record per step; a resumed
/// run first drops log lines past the checkpoint so the trace stays contiguous.
inline TrainState<float> train(const Config& c, const TrainOptions& opt, std::ostream& log) {
  const Recipe recipe = recipe_from_config(c);
  const ModelConfig mc = model_config(c);
  const fs::path data_dir = c.get("data.dir");
  const Corpus corpus = load_corpus(data_dir, read_manifest(data_dir / "manifest.jsonl"));
  const fs::path out_dir = c.get("train.out");
  fs::create_directories(out_dir);
  echo_config(c, out_dir);

  log << "phase plan: " << phase_plan(recipe) << "\n";
  for (const auto& p : recipe.phases) log << "  " << p.name << " " << p.steps << " steps\n";

  TrainState<float> state;
  std::vector<std::string> kept;
  if (opt.resume) {
    state = load_checkpoint<float>(checkpoint_path(c).string(), mc);
    std::ifstream in(log_path(c));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (nlohmann::json::parse(line).at("step").get<std::int64_t>() <= state.global_step) kept.push_back(line);
    }
    log << "resumed at step " << state.global_step << " (phase " << state.current().name << ")\n";
  } else {
    state = init_train_state<float>(recipe, mc, static_cast<std::uint64_t>(c.get_int("seed")));
  }
  std::ofstream trace(log_path(c), std::ios::binary | std::ios::trunc);
  require(trace.good(), ErrorKind::Io, "cannot write " + log_path(c).string());
  for (const auto& l : kept) trace << l << "\n";

  RunHooks<float> hooks;
  hooks.checkpoint_every = static_cast<int>(c.get_int("train.checkpoint_every"));
  hooks.stop_after = opt.stop_after;
  hooks.on_step = [&](const StepMetrics& m) { trace << to_json_line(m) << "\n"; };
  hooks.on_checkpoint = [&](const TrainState<float>& s) {
    trace.flush();
    save_checkpoint(s, checkpoint_path(c).string());
  };
  run_recipe(state, corpus, static_cast<int>(c.get_int("train.batch_size")), stream_options(c), hooks);
  trace.flush();
  save_checkpoint(state, checkpoint_path(c).string());
  log << "train: " << state.global_step << " steps, checkpoint " << checkpoint_path(c).string() << "\n";
  return state;
}

// ---------------------------------------------------------------------------
// Model loading for eval/infer

inline ParameterStore<float> load_weights(const std::string& checkpoint, bool use_ema) {
  auto s = load_checkpoint<float>(checkpoint);
  return use_ema ? std::move(s.ema) : std::move(s.params);
}

// ---------------------------------------------------------------------------
// eval

struct RestoreRow {
  std::string mode;
  int n = 0;
  double psnr_mean = 0.0;  // over finite values
  int psnr_inf = 0;        // identical outputs (PSNR sentinel)
  double ssim_mean = 0.0;
};

struct IqaRow {
  int n = 0;
  int parsed = 0;
  double plcc = std::numeric_limits<double>::quiet_NaN();
  double srcc = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
  std::string model;
  std::vector<RestoreRow> restore;
  IqaRow iqa;

  nlohmann::ordered_json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); };
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : restore)
      rows.push_back({{"prompt_mode", r.mode}, {"n", r.n}, {"psnr_y", num(r.psnr_mean)}, {"psnr_inf_count", r.psnr_inf},
                      {"ssim_y", num(r.ssim_mean)}});
    return {{"model", model},
            {"restore", rows},
            {"iqa", {{"n", iqa.n}, {"parsed", iqa.parsed}, {"plcc", num(iqa.plcc)}, {"srcc", num(iqa.srcc)}}}};
  }
};

/// Restoration rows per prompt mode and IQA correlations over scoring records.
/// `model` is "checkpoint", "identity" (returns the LQ input) or "oracle" (returns HQ
/// and the ground-truth score).
inline EvalReport evaluate(const Config& c, const fs::path& manifest, const std::string& checkpoint) {
  const std::string kind = c.get("eval.model");
  require(kind == "checkpoint" || kind == "identity" || kind == "oracle", ErrorKind::InvalidArgument,
          "eval.model must be checkpoint, identity or oracle");
  const fs::path root = manifest.parent_path();
  auto records = read_manifest(manifest);
  const auto limit = c.get_int("eval.limit");
  std::optional<ParameterStore<float>> weights;
  if (kind == "checkpoint") {
    require(fs::exists(checkpoint), ErrorKind::Io, "checkpoint '" + checkpoint + "' not found");
    weights = load_weights(checkpoint, c.get_bool("sample.use_ema"));
  }
  const SampleConfig sc = sample_config(c);
  const StreamOptions so = stream_options(c);

  EvalReport rep;
  rep.model = kind;
  for (const auto& mode_name : c.get_list("eval.modes")) {
    const PromptMode mode = parse_prompt_mode(mode_name);
    RestoreRow row;
    row.mode = mode_name;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    int finite = 0;
    for (const auto& r : records) {
      if (r.task != Task::Restore && r.task != Task::InterleavedRestore) continue;
      if (limit > 0 && row.n >= limit) break;
      const Image lq = read_png(root / r.lq_path), hq = read_png(root / r.hq_path);
      Image out;
      if (kind == "identity") {
        out = lq;
      } else if (kind == "oracle") {
        out = hq;
      } else {
        TaskInputs in;
        in.images = {lq};
        if (mode == PromptMode::External) in.external_analysis = analysis_text(r.degradations);
        out = *run_task(*weights, InferTask::Restore, in, sc, mode, so).image;
      }
      const double p = psnr_y(out, hq);
      if (p == kPsnrInfinity) ++row.psnr_inf;
      else {
        psnr_sum += p;
        ++finite;
      }
      ssim_sum += ssim_y(out, hq);
      ++row.n;
    }
    row.psnr_mean = finite ? psnr_sum / finite : std::numeric_limits<double>::quiet_NaN();
    row.ssim_mean = row.n ? ssim_sum / row.n : std::numeric_limits<double>::quiet_NaN();
    rep.restore.push_back(row);
  }

  std::vector<double> pred, truth;
  for (const auto& r : records) {
    if (r.task != Task::IqaScore || !r.score) continue;
    if (limit > 0 && rep.iqa.n >= limit) break;
    ++rep.iqa.n;
    std::optional<double> score;
    if (kind == "oracle") {
      score = *r.score;
    } else if (kind == "checkpoint") {
      TaskInputs in;
      in.images = {read_png(root / r.lq_path)};
      in.instruction = r.instruction;
      score = parse_score(*run_task(*weights, InferTask::Iqa, in, sc, PromptMode::Simple, so).text);
    }
    if (!score) continue;
    ++rep.iqa.parsed;
    pred.push_back(*score);
    truth.push_back(*r.score);
  }
  if (pred.size() >= 2) {
    try {
      const auto corr = correlations(pred, truth);
      rep.iqa.plcc = corr.plcc;
      rep.iqa.srcc = corr.srcc;
    } catch (const Error&) {
      // Constant predictions leave the correlations undefined.
    }
  }
  return rep;
}

inline std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "model: " << r.model << "\n";
  for (const auto& row : r.restore)
    os << "restore[" << row.mode << "] n=" << row.n << " psnr_y=" << row.psnr_mean << " psnr_inf=" << row.psnr_inf
       << " ssim_y=" << row.ssim_mean << "\n";
  os << "iqa n=" << r.iqa.n << " parsed=" << r.iqa.parsed << " plcc=" << r.iqa.plcc << " srcc=" << r.iqa.srcc << "\n";
  return os.str();
}

inline EvalReport eval(const Config& c, const fs::path& manifest, const std::string& checkpoint, const fs::path& out_dir,
                       std::ostream& log) {
  const EvalReport rep = evaluate(c, manifest, checkpoint);
  fs::create_directories(out_dir);
  echo_config(c, out_dir);
  std::ofstream out(out_dir / "report.json", std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot write " + (out_dir / "report.json").string());
  out << rep.to_json().dump(2) << "\n";
  log << format_report(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// infer

struct InferRequest {
  InferTask task = InferTask::Restore;
  PromptMode mode = PromptMode::Simple;
  std::vector<std::string> inputs;
  std::string output;  // PNG path for image results (may be empty for iqa)
  std::string checkpoint;
  std::optional<std::string> instruction;
  std::string analysis;  // external prompt mode
};

inline TaskOutput infer(const Config& c, const InferRequest& req, std::ostream& out) {
  require(!req.checkpoint.empty(), ErrorKind::InvalidArgument, "infer needs --checkpoint");
  const auto weights = load_weights(req.checkpoint, c.get_bool("sample.use_ema"));
  TaskInputs in;
  for (const auto& p : req.inputs) in.images.push_back(read_png(p));
  in.instruction = req.instruction;
  in.external_analysis = req.analysis;
  const TaskOutput res = run_task(weights, req.task, in, sample_config(c), req.mode, stream_options(c));
  if (res.text) out << *res.text << "\n";
  if (res.image) {
    require(!req.output.empty(), ErrorKind::InvalidArgument, "restoration needs --out for the output PNG");
    const fs::path o = req.output;
    if (o.has_parent_path()) fs::create_directories(o.parent_path());
    write_png(o, *res.image);
    echo_config(c, o.has_parent_path() ? o.parent_path() : fs::path("."), o.filename().string() + ".config");
  }
  return res;
}

}  // namespace motir::cli
