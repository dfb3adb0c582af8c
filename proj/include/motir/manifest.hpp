#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motir/corpus.hpp"
#include "motir/error.hpp"
#include "motir/png_io.hpp"

namespace motir {

namespace fs = std::filesystem;

/// One manifest line. Paths are relative to the dataset directory; a
/// comparison stores its two candidates as "a.png;b.png" in lq_path and the
/// reference in hq_path.
struct ManifestRecord {
  Partition partition = Partition::Single;
  Task task = Task::Restore;
  std::string instruction;
  std::string lq_path;
  std::string hq_path;
  std::string response_text;
  std::vector<DegradationSpec> degradations;
  int downsample_factor = 1;
  std::optional<double> score;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

inline nlohmann::ordered_json to_json(const DegradationSpec& d) {
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto& [k, v] : d.params) params[k] = v;
  return {{"kind", to_string(d.kind)}, {"params", params}, {"seed", d.seed}};
}

inline DegradationSpec degradation_from_json(const nlohmann::ordered_json& j) {
  DegradationSpec d;
  d.kind = parse_degradation_kind(j.at("kind").get<std::string>());
  for (const auto& [k, v] : j.at("params").items()) d.params[k] = v.get<double>();
  d.seed = j.at("seed").get<std::uint64_t>();
  d.validate();
  return d;
}

inline std::string to_json_line(const ManifestRecord& r) {
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  for (const auto& d : r.degradations) stages.push_back(to_json(d));
  nlohmann::ordered_json j;
  j["partition"] = to_string(r.partition);
  j["task"] = to_string(r.task);
  j["instruction"] = r.instruction;
  j["lq_path"] = r.lq_path;
  j["hq_path"] = r.hq_path;
  j["response_text"] = r.response_text;
  j["degradation_spec"] = {{"stages", stages}, {"downsample_factor", r.downsample_factor}};
  j["score"] = r.score ? nlohmann::ordered_json(*r.score) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

inline ManifestRecord record_from_json_line(const std::string& line) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("manifest line is not JSON: ") + e.what());
  }
  ManifestRecord r;
  try {
    r.partition = parse_partition(j.at("partition").get<std::string>());
    r.task = parse_task(j.at("task").get<std::string>());
    r.instruction = j.at("instruction").get<std::string>();
    r.lq_path = j.at("lq_path").get<std::string>();
    r.hq_path = j.at("hq_path").get<std::string>();
    r.response_text = j.at("response_text").get<std::string>();
    const auto& spec = j.at("degradation_spec");
    for (const auto& d : spec.at("stages")) r.degradations.push_back(degradation_from_json(d));
    r.downsample_factor = spec.at("downsample_factor").get<int>();
    if (!j.at("score").is_null()) r.score = j.at("score").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("manifest record: ") + e.what());
  }
  return r;
}

inline std::vector<std::string> split_paths(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto semi = s.find(';', start);
    out.push_back(s.substr(start, semi - start));
    if (semi == std::string::npos) return out;
    start = semi + 1;
  }
}

/// Writes the sample's images under `root/<partition>/` and returns its record.
inline ManifestRecord write_sample(const fs::path& root, const TrainingSample& s, int index) {
  const std::string part(to_string(s.partition));
  fs::create_directories(root / part);
  char stem[32];
  std::snprintf(stem, sizeof stem, "%05d", index);
  const std::string base = part + "/" + stem;

  ManifestRecord r;
  r.partition = s.partition;
  r.task = s.task;
  r.instruction = s.instruction();
  r.response_text = s.response_text();
  r.degradations = s.degradations;
  r.downsample_factor = s.downsample_factor;
  r.score = s.score;
  const auto inputs = s.input_images();
  if (inputs.size() == 1) {
    r.lq_path = base + "_lq.png";
    write_png(root / r.lq_path, *inputs[0]);
  } else {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const std::string p = base + "_" + static_cast<char>('a' + k) + ".png";
      write_png(root / p, *inputs[k]);
      r.lq_path += (k ? ";" : "") + p;
    }
  }
  const Image* hq = s.has_image_response() ? s.target_images().front() : (s.reference ? &*s.reference : nullptr);
  if (hq) {
    r.hq_path = base + "_hq.png";
    write_png(root / r.hq_path, *hq);
  }
  return r;
}

/// Rebuilds a training sample from a record and its PNGs.
inline TrainingSample load_sample(const fs::path& root, const ManifestRecord& r) {
  TrainingSample s;
  s.task = r.task;
  s.partition = r.partition;
  s.degradations = r.degradations;
  s.downsample_factor = r.downsample_factor;
  s.score = r.score;
  s.condition.push_back({r.instruction});
  for (const auto& p : split_paths(r.lq_path)) s.condition.push_back({read_png(root / p)});
  const bool image_response = r.task == Task::Restore || r.task == Task::InterleavedRestore;
  if (!r.response_text.empty() || !image_response) s.response.push_back({r.response_text});
  if (!r.hq_path.empty()) {
    Image hq = read_png(root / r.hq_path);
    if (image_response) s.response.push_back({std::move(hq)});
    else s.reference = std::move(hq);
  }
  s.validate();
  return s;
}

inline void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot write manifest '" + path.string() + "'");
  for (const auto& r : records) out << to_json_line(r) << '\n';
  require(out.good(), ErrorKind::Io, "short write to manifest '" + path.string() + "'");
}

inline std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot read manifest '" + path.string() + "'");
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json_line(line));
    } catch (const Error& e) {
      fail(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline Corpus load_corpus(const fs::path& root, const std::vector<ManifestRecord>& records) {
  Corpus c;
  for (const auto& r : records) c[r.partition].push_back(load_sample(root, r));
  return c;
}

}  // namespace motir
