#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "motir/cli.hpp"

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace motir;
  CLI::App app{"motir: unified image quality assessment and restoration at desk scale"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> overrides;
  long long seed = -1;
  app.add_option("--config", config_file, "key=value config file");
  app.add_option("--set", overrides, "override a config key (key=value), repeatable");
  app.add_option("--seed", seed, "global seed (same as --set seed=N)");

  auto* synth = app.add_subcommand("synth-data", "synthesize a seeded dataset and manifest");
  std::string synth_out, partitions;
  synth->add_option("--out", synth_out, "dataset directory (data.dir)");
  synth->add_option("--partitions", partitions, "comma list of iqa,single,multi,high_order,interleaved");

  auto* train = app.add_subcommand("train", "run the training recipe");
  std::string recipe, train_data, train_out;
  bool all_in_one = false, resume = false, plan_only = false;
  long long stop_after = -1;
  train->add_option("--recipe", recipe, "paper or desk");
  train->add_flag("--all-in-one", all_in_one, "collapse the curriculum into one mixed phase");
  train->add_flag("--resume", resume, "continue from <out>/checkpoint.bin");
  train->add_flag("--plan-only", plan_only, "print the phase plan and exit");
  train->add_option("--data", train_data, "dataset directory (data.dir)");
  train->add_option("--out", train_out, "run directory (train.out)");
  train->add_option("--stop-after", stop_after, "checkpoint and stop at this global step");

  auto* eval = app.add_subcommand("eval", "evaluate restoration and IQA on a manifest");
  std::string eval_ckpt, eval_manifest, eval_out = "eval", eval_model;
  std::vector<std::string> modes;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file");
  eval->add_option("--manifest", eval_manifest, "manifest (default <data.dir>/manifest.jsonl)");
  eval->add_option("--out", eval_out, "report directory");
  eval->add_option("--model", eval_model, "checkpoint, identity or oracle");
  eval->add_option("--modes", modes, "prompt modes to report")->delimiter(',');

  auto* infer = app.add_subcommand("infer", "run one task on input images");
  cli::InferRequest req;
  std::string task = "restore", mode = "simple", instruction;
  int steps = -1;
  double cfg_scale = -1.0;
  long long sample_seed = -1;
  infer->add_option("--task", task, "iqa, restore or assess-restore");
  infer->add_option("--prompt-mode", mode, "simple, analyze or external");
  infer->add_option("--in", req.inputs, "input PNG (two for comparison)")->required()->delimiter(',');
  infer->add_option("--out", req.output, "output PNG");
  infer->add_option("--steps", steps, "sampling steps");
  infer->add_option("--cfg-scale", cfg_scale, "guidance scale");
  infer->add_option("--seed", sample_seed, "sampling seed");
  infer->add_option("--checkpoint", req.checkpoint, "checkpoint file")->required();
  infer->add_option("--instruction", instruction, "replace the default instruction");
  infer->add_option("--analysis", req.analysis, "analysis text for --prompt-mode external");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: UsageError: " << e.what() << "\n";
    return 2;
  }

  try {
    if (seed >= 0) overrides.insert(overrides.begin(), "seed=" + std::to_string(seed));
    auto add = [&](const std::string& key, const std::string& value) {
      if (!value.empty()) overrides.push_back(key + "=" + value);
    };
    add("data.dir", synth_out);
    add("data.partitions", partitions);
    add("train.recipe", recipe);
    add("data.dir", train_data);
    add("train.out", train_out);
    if (all_in_one) add("train.all_in_one", "true");
    add("eval.model", eval_model);
    add("eval.modes", join(modes));
    if (steps >= 0) add("sample.steps", std::to_string(steps));
    if (cfg_scale >= 0.0) add("sample.cfg_scale", std::to_string(cfg_scale));
    if (sample_seed >= 0) add("sample.seed", std::to_string(sample_seed));
    const Config cfg = resolve_config(config_file, overrides);

    if (*synth) {
      cli::synth_data(cfg, std::cout);
    } else if (*train) {
      if (plan_only) {
        std::cout << "phase plan: " << cli::phase_plan(recipe_from_config(cfg)) << "\n";
        return 0;
      }
      cli::train(cfg, {resume, stop_after}, std::cout);
    } else if (*eval) {
      const std::string manifest = eval_manifest.empty() ? cli::manifest_path(cfg).string() : eval_manifest;
      const std::string ckpt = eval_ckpt.empty() ? cli::checkpoint_path(cfg).string() : eval_ckpt;
      cli::eval(cfg, manifest, ckpt, eval_out, std::cout);
    } else if (*infer) {
      req.task = parse_infer_task(task);
      req.mode = parse_prompt_mode(mode);
      if (!instruction.empty()) req.instruction = instruction;
      cli::infer(cfg, req, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
