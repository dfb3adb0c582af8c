#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "motir/corpus.hpp"
#include "motir/error.hpp"
#include "motir/params.hpp"
#include "motir/sampler.hpp"
#include "motir/trainer.hpp"

namespace motir {

/// Flat key=value configuration. Every key has a built-in default; files and
/// overrides may only set keys that exist.
class Config {
 public:
  static Config defaults() {
    Config c;
    c.values_ = {
        {"seed", "1"},
        {"data.dir", "data"},
        {"data.partitions", "iqa,single,multi,high_order,interleaved"},
        {"data.count.iqa", "64"},
        {"data.count.single", "64"},
        {"data.count.multi", "64"},
        {"data.count.high_order", "64"},
        {"data.count.interleaved", "64"},
        {"data.image_size", "32"},
        {"data.high_order_rounds", "2"},
        {"data.downsample", "1"},
        {"data.clean_fraction", "0.15"},
        {"model.d_model", "64"},
        {"model.n_blocks", "2"},
        {"model.n_heads", "2"},
        {"model.ff_mult", "4"},
        {"model.patch", "4"},
        {"model.max_seq_len", "512"},
        {"train.out", "run"},
        {"train.recipe", "desk"},
        {"train.all_in_one", "false"},
        {"train.batch_size", "4"},
        {"train.checkpoint_every", "0"},
        {"train.desk.steps", "100,200,15,100"},
        {"train.desk.warmup", "10,10,10,20"},
        {"train.desk.lr", "1e-3"},
        {"loss.lambda", "0.25"},
        {"loss.shift", "4.0"},
        {"loss.drop_text", "0.1"},
        {"loss.drop_vit", "0.1"},
        {"loss.drop_cleanvae", "0.1"},
        {"sample.steps", "32"},
        {"sample.cfg_scale", "2.0"},
        {"sample.text_max_len", "256"},
        {"sample.temperature", "0"},
        {"sample.seed", "0"},
        {"sample.use_ema", "true"},
        {"eval.model", "checkpoint"},
        {"eval.modes", "simple,analyze"},
        {"eval.limit", "0"},
    };
    return c;
  }

  bool contains(const std::string& key) const { return values_.contains(key); }

  void set(const std::string& key, const std::string& value) {
    require(contains(key), ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// Applies "key=value" (whitespace around either side is ignored).
  void apply(const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, ErrorKind::InvalidArgument, "override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  /// Reads key=value lines; '#' starts a comment.
  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Io, "cannot read config file '" + path.string() + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      if (trim(line).empty()) continue;
      try {
        apply(line);
      } catch (const Error& e) {
        fail(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
    return it->second;
  }

  long long get_int(const std::string& key) const { return parse_int(key, get(key)); }

  double get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::InvalidArgument, "config key " + key + " expects a number, got '" + v + "'");
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(ErrorKind::InvalidArgument, "config key " + key + " expects true/false, got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ','))
      if (!trim(item).empty()) out.push_back(trim(item));
    return out;
  }

  std::vector<long long> get_ints(const std::string& key) const {
    std::vector<long long> out;
    for (const auto& s : get_list(key)) out.push_back(parse_int(key, s));
    return out;
  }

  /// Resolved configuration, one key=value per line in key order.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  static long long parse_int(const std::string& key, const std::string& v) {
    long long x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    require(ec == std::errc() && p == v.data() + v.size(), ErrorKind::InvalidArgument,
            "config key " + key + " expects an integer, got '" + v + "'");
    return x;
  }

  std::map<std::string, std::string> values_;
};

/// defaults < file < overrides.
inline Config resolve_config(const std::string& file, const std::vector<std::string>& overrides) {
  Config c = Config::defaults();
  if (!file.empty()) c.load_file(file);
  for (const auto& o : overrides) c.apply(o);
  return c;
}

// ---------------------------------------------------------------------------
// Typed views

inline ModelConfig model_config(const Config& c) {
  ModelConfig m;
  m.d_model = static_cast<int>(c.get_int("model.d_model"));
  m.n_blocks = static_cast<int>(c.get_int("model.n_blocks"));
  m.n_heads = static_cast<int>(c.get_int("model.n_heads"));
  m.ff_mult = static_cast<int>(c.get_int("model.ff_mult"));
  m.patch = static_cast<int>(c.get_int("model.patch"));
  m.max_seq_len = static_cast<int>(c.get_int("model.max_seq_len"));
  m.validate();
  return m;
}

inline StreamOptions stream_options(const Config& c) {
  return {static_cast<int>(c.get_int("model.patch")), static_cast<int>(c.get_int("model.max_seq_len"))};
}

inline CorpusConfig corpus_config(const Config& c) {
  CorpusConfig cc;
  cc.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  cc.image_size = static_cast<int>(c.get_int("data.image_size"));
  cc.patch = static_cast<int>(c.get_int("model.patch"));
  cc.high_order_rounds = static_cast<int>(c.get_int("data.high_order_rounds"));
  cc.downsample_factor = static_cast<int>(c.get_int("data.downsample"));
  cc.clean_fraction = c.get_double("data.clean_fraction");
  cc.counts.clear();
  for (const auto& name : c.get_list("data.partitions")) {
    const Partition p = parse_partition(name);
    cc.counts[p] = static_cast<int>(c.get_int("data.count." + name));
  }
  require(!cc.counts.empty(), ErrorKind::InvalidArgument, "data.partitions selects nothing");
  return cc;
}

/// "paper" keeps the published constants; "desk" rescales step counts, warmups
/// and the learning rate from the train.desk.* keys, keeping the phase order.
inline Recipe recipe_from_config(const Config& c) {
  Recipe r = default_recipe();
  const std::string which = c.get("train.recipe");
  if (which == "desk") {
    const auto steps = c.get_ints("train.desk.steps");
    const auto warm = c.get_ints("train.desk.warmup");
    require(steps.size() == r.phases.size() && warm.size() == r.phases.size(), ErrorKind::InvalidArgument,
            "train.desk.steps and train.desk.warmup need one entry per phase (" + std::to_string(r.phases.size()) + ")");
    const double lr = c.get_double("train.desk.lr");
    for (std::size_t i = 0; i < r.phases.size(); ++i) {
      r.phases[i].steps = static_cast<int>(steps[i]);
      r.phases[i].warmup_steps = static_cast<int>(warm[i]);
      r.phases[i].lr = lr;
    }
  } else {
    require(which == "paper", ErrorKind::InvalidArgument, "train.recipe must be 'paper' or 'desk', got '" + which + "'");
  }
  r.loss.lambda = c.get_double("loss.lambda");
  r.loss.shift = c.get_double("loss.shift");
  r.loss.drop_text = c.get_double("loss.drop_text");
  r.loss.drop_vit = c.get_double("loss.drop_vit");
  r.loss.drop_cleanvae = c.get_double("loss.drop_cleanvae");
  if (c.get_bool("train.all_in_one")) r = all_in_one(r);
  r.validate();
  return r;
}

inline SampleConfig sample_config(const Config& c) {
  SampleConfig s;
  s.n_steps = static_cast<int>(c.get_int("sample.steps"));
  s.cfg_scale = c.get_double("sample.cfg_scale");
  s.text_max_len = static_cast<int>(c.get_int("sample.text_max_len"));
  s.temperature = c.get_double("sample.temperature");
  s.seed = static_cast<std::uint64_t>(c.get_int("sample.seed"));
  s.validate();
  return s;
}

}  // namespace motir
