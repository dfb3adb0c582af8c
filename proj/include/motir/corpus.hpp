#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "motir/degrade.hpp"
#include "motir/error.hpp"
#include "motir/imaging.hpp"
#include "motir/metrics.hpp"
#include "motir/rng.hpp"
#include "motir/texture.hpp"

namespace motir {

enum class Task { IqaScore, IqaDescribe, IqaCompare, Restore, InterleavedRestore };
enum class Partition { Iqa, Single, Multi, HighOrder, Interleaved };

inline constexpr std::array<Partition, 5> kAllPartitions = {Partition::Iqa, Partition::Single, Partition::Multi,
                                                            Partition::HighOrder, Partition::Interleaved};

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::IqaScore: return "iqa_score";
    case Task::IqaDescribe: return "iqa_describe";
    case Task::IqaCompare: return "iqa_compare";
    case Task::Restore: return "restore";
    case Task::InterleavedRestore: return "interleaved_restore";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  for (auto t : {Task::IqaScore, Task::IqaDescribe, Task::IqaCompare, Task::Restore, Task::InterleavedRestore})
    if (to_string(t) == s) return t;
  fail(ErrorKind::InvalidArgument, "unknown task '" + std::string(s) + "'");
}

inline std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::Iqa: return "iqa";
    case Partition::Single: return "single";
    case Partition::Multi: return "multi";
    case Partition::HighOrder: return "high_order";
    case Partition::Interleaved: return "interleaved";
  }
  return "?";
}

inline Partition parse_partition(std::string_view s) {
  for (auto p : kAllPartitions)
    if (to_string(p) == s) return p;
  fail(ErrorKind::InvalidArgument, "unknown partition '" + std::string(s) + "'");
}

inline bool is_iqa(Task t) { return t == Task::IqaScore || t == Task::IqaDescribe || t == Task::IqaCompare; }

/// One piece of a condition or response: text, or an image (input on the
/// condition side, target on the response side).
struct Segment {
  std::variant<std::string, Image> value;

  bool is_text() const noexcept { return std::holds_alternative<std::string>(value); }
  const std::string& text() const { return std::get<std::string>(value); }
  const Image& image() const { return std::get<Image>(value); }
};

struct TrainingSample {
  Task task = Task::Restore;
  Partition partition = Partition::Single;
  std::vector<Segment> condition;
  std::vector<Segment> response;

  // Provenance, used for manifests, score oracles and analysis templates.
  std::vector<DegradationSpec> degradations;
  int downsample_factor = 1;
  std::optional<double> score;
  std::optional<Image> reference;  // clean image behind an IQA sample (never shown to the model)

  std::vector<const Image*> images(const std::vector<Segment>& segs) const {
    std::vector<const Image*> out;
    for (const auto& s : segs)
      if (!s.is_text()) out.push_back(&s.image());
    return out;
  }
  std::vector<const Image*> input_images() const { return images(condition); }
  std::vector<const Image*> target_images() const { return images(response); }

  std::string instruction() const {
    for (const auto& s : condition)
      if (s.is_text()) return s.text();
    return {};
  }
  std::string response_text() const {
    std::string out;
    for (const auto& s : response)
      if (s.is_text()) out += s.text();
    return out;
  }
  bool has_text_response() const {
    for (const auto& s : response)
      if (s.is_text()) return true;
    return false;
  }
  bool has_image_response() const { return !target_images().empty(); }

  void validate() const {
    const auto in = input_images().size(), out = target_images().size();
    if (task == Task::Restore || task == Task::InterleavedRestore) {
      require(in == 1 && out == 1, ErrorKind::InvalidArgument,
              "restore samples need exactly one input and one target image");
      require(task != Task::InterleavedRestore || has_text_response(), ErrorKind::InvalidArgument,
              "interleaved samples need response text");
    } else {
      require(in >= 1 && out == 0 && has_text_response(), ErrorKind::InvalidArgument,
              "iqa samples need >=1 input image and a text-only response");
    }
    require(!condition.empty(), ErrorKind::InvalidArgument, "sample has an empty condition");
  }
};

using Corpus = std::map<Partition, std::vector<TrainingSample>>;

/// Fixed instruction pools, indexed by a seeded draw.
namespace prompts {
inline const std::vector<std::string> kScore = {
    "Rate the quality of this image.",
    "Give a quality score for this image.",
    "How good is this image? Answer with a score.",
};
inline const std::vector<std::string> kDescribe = {
    "Describe the degradations in this image.",
    "What distortions does this image have?",
};
inline const std::vector<std::string> kCompare = {
    "Which image has better quality, A or B?",
    "Compare the two images and pick the better one.",
};
inline const std::vector<std::string> kAnalyzeThenRestore = {
    "Analyze the defects of this image, plan the fixes, then enhance it.",
    "Assess the image quality, explain how to improve it, then return the enhanced image.",
    "Enhance the image. First describe its problems and the steps to fix them.",
};
inline const std::string kMixDegraded = "enhance this mix-degraded image.";
inline const std::string kWithPrefix = "enhance this image with ";
}  // namespace prompts

inline std::string format_score(double score) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "The quality score is %.2f.", score);
  return buf;
}

/// Synthetic ground-truth score: 5 - 4 * combined severity.
inline double quality_score(const std::vector<DegradationSpec>& specs) {
  const double s = specs.empty() ? 0.0 : severity(specs);
  return std::round((5.0 - 4.0 * s) * 100.0) / 100.0;
}

inline std::string_view severity_word(double s) {
  if (s < 1.0 / 3.0) return "mild";
  if (s < 2.0 / 3.0) return "moderate";
  return "severe";
}

inline std::string_view remedy(DegradationKind k) {
  switch (k) {
    case DegradationKind::Blur: return "deblur";
    case DegradationKind::Noise: return "denoise";
    case DegradationKind::Jpeg: return "remove compression artifacts";
    case DegradationKind::LowLight: return "brighten";
    case DegradationKind::Haze: return "dehaze";
    case DegradationKind::Rain: return "remove rain streaks";
  }
  return "restore";
}

/// Kinds in first-application order, each with its worst severity.
inline std::vector<std::pair<DegradationKind, double>> summarize(const std::vector<DegradationSpec>& specs) {
  std::vector<std::pair<DegradationKind, double>> out;
  for (const auto& s : specs) {
    const double sev = severity(s);
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == s.kind; });
    if (it == out.end()) out.emplace_back(s.kind, sev);
    else it->second = std::max(it->second, sev);
  }
  return out;
}

inline std::string join_kinds(const std::vector<DegradationSpec>& specs) {
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += ", ";
    out += to_string(s.kind);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sample constructors

inline TrainingSample make_restore_sample(const Image& hq, const std::vector<DegradationSpec>& specs,
                                          Partition partition) {
  require(partition == Partition::Single || partition == Partition::Multi, ErrorKind::InvalidArgument,
          "degradation lists build single or multi samples");
  require(!specs.empty(), ErrorKind::InvalidArgument, "restore sample needs at least one degradation");
  require(partition != Partition::Single || specs.size() == 1, ErrorKind::InvalidArgument,
          "single-degradation samples take exactly one degradation");
  TrainingSample s;
  s.task = Task::Restore;
  s.partition = partition;
  s.degradations = specs;
  s.condition = {{prompts::kWithPrefix + join_kinds(specs)}, {compose(hq, specs)}};
  s.response = {{hq}};
  return s;
}

/// High-order sample. The target is area-downsampled along with the input so
/// both share one resolution.
inline TrainingSample make_restore_sample(const Image& hq, const PipelineSpec& pipe) {
  TrainingSample s;
  s.task = Task::Restore;
  s.partition = Partition::HighOrder;
  s.degradations = pipe.stages;
  s.downsample_factor = pipe.downsample_factor;
  s.condition = {{prompts::kMixDegraded}, {high_order(hq, pipe)}};
  s.response = {{downsample(hq, pipe.downsample_factor)}};
  return s;
}

inline TrainingSample make_score_sample(const Image& hq, const std::vector<DegradationSpec>& specs,
                                        std::size_t prompt_index = 0) {
  TrainingSample s;
  s.task = Task::IqaScore;
  s.partition = Partition::Iqa;
  s.degradations = specs;
  s.score = quality_score(specs);
  s.reference = hq;
  const Image lq = specs.empty() ? hq : compose(hq, specs);
  s.condition = {{prompts::kScore[prompt_index % prompts::kScore.size()]}, {lq}};
  s.response = {{format_score(*s.score)}};
  return s;
}

inline std::string describe_text(const std::vector<DegradationSpec>& specs) {
  if (specs.empty()) return "The image shows no visible degradation.";
  std::string out = "The image shows ";
  bool first = true;
  for (const auto& [kind, sev] : summarize(specs)) {
    if (!first) out += ", ";
    first = false;
    out += std::string(to_string(kind)) + " (" + std::string(severity_word(sev)) + ")";
  }
  return out + ".";
}

inline TrainingSample make_describe_sample(const Image& hq, const std::vector<DegradationSpec>& specs,
                                           std::size_t prompt_index = 0) {
  TrainingSample s;
  s.task = Task::IqaDescribe;
  s.partition = Partition::Iqa;
  s.degradations = specs;
  s.score = quality_score(specs);
  s.reference = hq;
  const Image lq = specs.empty() ? hq : compose(hq, specs);
  s.condition = {{prompts::kDescribe[prompt_index % prompts::kDescribe.size()]}, {lq}};
  s.response = {{describe_text(specs)}};
  return s;
}

/// Verdict picks the candidate with the higher PSNR-Y against the reference
/// (A on ties). The reference labels the pair but is not shown to the model.
inline TrainingSample make_compare_sample(const Image& a, const Image& b, const std::optional<Image>& reference,
                                          std::size_t prompt_index = 0) {
  require(reference.has_value(), ErrorKind::InvalidArgument, "image comparison requires a reference image");
  const double pa = psnr_y(a, *reference), pb = psnr_y(b, *reference);
  TrainingSample s;
  s.task = Task::IqaCompare;
  s.partition = Partition::Iqa;
  s.reference = reference;
  s.condition = {{prompts::kCompare[prompt_index % prompts::kCompare.size()]}, {a}, {b}};
  s.response = {{pa >= pb ? std::string("Image A is better.") : std::string("Image B is better.")}};
  return s;
}

enum class IqaKind { Score, Describe, Compare };

/// Dispatcher over the three IQA sample kinds. `images` holds one image for
/// score/describe (already clean; `specs` are applied) and two candidates for compare.
inline TrainingSample make_iqa_sample(const std::vector<Image>& images, IqaKind kind,
                                      const std::vector<DegradationSpec>& specs = {},
                                      const std::optional<Image>& reference = std::nullopt,
                                      std::size_t prompt_index = 0) {
  switch (kind) {
    case IqaKind::Score:
      require(images.size() == 1, ErrorKind::InvalidArgument, "scoring takes one image");
      return make_score_sample(images[0], specs, prompt_index);
    case IqaKind::Describe:
      require(images.size() == 1, ErrorKind::InvalidArgument, "description takes one image");
      return make_describe_sample(images[0], specs, prompt_index);
    case IqaKind::Compare:
      require(images.size() == 2, ErrorKind::InvalidArgument, "comparison takes two candidates");
      return make_compare_sample(images[0], images[1], reference, prompt_index);
  }
  fail(ErrorKind::InvalidArgument, "unknown IQA kind");
}

/// Four-part analysis: (1) intent (2) analysis (3) plan (4) expected result.
inline std::string analysis_text(const std::vector<DegradationSpec>& specs) {
  std::string found, plan;
  for (const auto& [kind, sev] : summarize(specs)) {
    if (!found.empty()) found += ", ";
    if (!plan.empty()) plan += ", ";
    found += std::string(to_string(kind)) + " (" + std::string(severity_word(sev)) + ")";
    plan += remedy(kind);
  }
  if (found.empty()) {
    found = "no visible defects";
    plan = "keep as is";
  }
  return "(1) Intent: enhance the image. (2) Analysis: " + found + ". (3) Plan: " + plan +
         ". (4) Result: a clean image with natural detail.";
}

inline TrainingSample make_interleaved_sample(const TrainingSample& restore, std::size_t prompt_index = 0) {
  require(restore.task == Task::Restore, ErrorKind::InvalidArgument, "interleaved samples derive from restore samples");
  restore.validate();
  TrainingSample s;
  s.task = Task::InterleavedRestore;
  s.partition = Partition::Interleaved;
  s.degradations = restore.degradations;
  s.downsample_factor = restore.downsample_factor;
  s.condition = {{prompts::kAnalyzeThenRestore[prompt_index % prompts::kAnalyzeThenRestore.size()]},
                 {*restore.input_images().front()}};
  s.response = {{analysis_text(restore.degradations)}, {*restore.target_images().front()}};
  return s;
}

// ---------------------------------------------------------------------------
// Mixing

using MixRatios = std::map<Partition, double>;

/// Seeded i.i.d. categorical draws over partitions, uniform within one.
class Mixer {
 public:
  Mixer(const Corpus& corpus, MixRatios ratios, std::uint64_t seed) : corpus_(&corpus), rng_(seed) {
    double sum = 0.0;
    for (auto p : kAllPartitions) {
      const double r = ratios.contains(p) ? ratios.at(p) : 0.0;
      require(r >= 0.0 && std::isfinite(r), ErrorKind::InvalidArgument,
              "mixing ratio for " + std::string(to_string(p)) + " must be nonnegative");
      if (r > 0.0) {
        auto it = corpus.find(p);
        require(it != corpus.end() && !it->second.empty(), ErrorKind::InvalidArgument,
                "mixing ratio references empty partition " + std::string(to_string(p)));
      }
      sum += r;
      cumulative_[static_cast<std::size_t>(p)] = sum;
    }
    require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::InvalidArgument,
            "mixing ratios must sum to 1, got " + std::to_string(sum));
  }

  Partition next_partition() {
    const double u = rng_.uniform();
    for (auto p : kAllPartitions)
      if (u < cumulative_[static_cast<std::size_t>(p)]) return p;
    // u landed in the rounding slack above the final cumulative value.
    for (auto it = kAllPartitions.rbegin(); it != kAllPartitions.rend(); ++it)
      if (has_mass(*it)) return *it;
    fail(ErrorKind::State, "mixer has no partitions");
  }

  const TrainingSample& next() {
    const Partition p = next_partition();
    const auto& samples = corpus_->at(p);
    return samples[rng_.below(samples.size())];
  }

  const CounterRng& rng() const noexcept { return rng_; }
  void set_rng(const CounterRng& r) noexcept { rng_ = r; }

 private:
  bool has_mass(Partition p) const {
    const auto i = static_cast<std::size_t>(p);
    return cumulative_[i] > (i == 0 ? 0.0 : cumulative_[i - 1]);
  }
  const Corpus* corpus_;
  CounterRng rng_;
  std::array<double, 5> cumulative_{};
};

// ---------------------------------------------------------------------------
// Corpus synthesis

struct CorpusConfig {
  std::uint64_t seed = 1;
  int image_size = 32;
  int patch = 4;
  std::map<Partition, int> counts = {{Partition::Iqa, 64},
                                     {Partition::Single, 64},
                                     {Partition::Multi, 64},
                                     {Partition::HighOrder, 64},
                                     {Partition::Interleaved, 64}};
  std::vector<IqaKind> iqa_kinds = {IqaKind::Score, IqaKind::Describe, IqaKind::Compare};
  int high_order_rounds = 2;
  int downsample_factor = 1;
  double clean_fraction = 0.15;  // IQA images left undegraded (score 5 anchor)
  SynthesisRanges ranges;
};

namespace detail {

inline std::vector<DegradationSpec> random_specs(const CorpusConfig& cfg, CounterRng& rng, std::uint64_t sample_seed,
                                                 int min_kinds, int max_kinds) {
  const int n = min_kinds + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_kinds - min_kinds + 1)));
  std::vector<DegradationKind> pool(kAllDegradations.begin(), kAllDegradations.end());
  std::vector<DegradationSpec> specs;
  for (int i = 0; i < n; ++i) {
    const auto pick = rng.below(pool.size());
    specs.push_back(cfg.ranges.sample(pool[pick], rng, derive_seed(sample_seed, static_cast<std::uint64_t>(i))));
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return specs;
}

inline TrainingSample random_restore(const CorpusConfig& cfg, Partition which, const Image& hq, CounterRng& rng,
                                     std::uint64_t sample_seed) {
  switch (which) {
    case Partition::Single: return make_restore_sample(hq, random_specs(cfg, rng, sample_seed, 1, 1), Partition::Single);
    case Partition::Multi: return make_restore_sample(hq, random_specs(cfg, rng, sample_seed, 2, 3), Partition::Multi);
    default:
      return make_restore_sample(hq, make_high_order_pipeline(cfg.ranges, rng, sample_seed, 0, cfg.high_order_rounds,
                                                              cfg.downsample_factor));
  }
}

}  // namespace detail

/// Builds one sample of a partition. Everything derives from (seed, partition, index).
inline TrainingSample synthesize_sample(const CorpusConfig& cfg, Partition partition, int index) {
  const std::uint64_t sample_seed =
      derive_seed(cfg.seed, static_cast<std::uint64_t>(partition), static_cast<std::uint64_t>(index));
  CounterRng rng(sample_seed);
  const int hq_size = cfg.image_size * (partition == Partition::HighOrder || partition == Partition::Interleaved
                                            ? cfg.downsample_factor
                                            : 1);
  const Image hq = procedural_image(rng, hq_size, hq_size);
  switch (partition) {
    case Partition::Single:
    case Partition::Multi:
    case Partition::HighOrder: return detail::random_restore(cfg, partition, hq, rng, sample_seed);
    case Partition::Interleaved: {
      constexpr std::array<Partition, 3> sources = {Partition::Single, Partition::Multi, Partition::HighOrder};
      const Partition src = sources[rng.below(sources.size())];
      const Image base = src == Partition::HighOrder ? hq : downsample(hq, cfg.downsample_factor);
      const auto restore = detail::random_restore(cfg, src, base, rng, sample_seed);
      return make_interleaved_sample(restore, rng.below(prompts::kAnalyzeThenRestore.size()));
    }
    case Partition::Iqa: {
      const IqaKind kind = cfg.iqa_kinds[static_cast<std::size_t>(index) % cfg.iqa_kinds.size()];
      const auto prompt = rng.below(8);
      if (kind == IqaKind::Compare) {
        const auto sa = detail::random_specs(cfg, rng, derive_seed(sample_seed, 1), 1, 2);
        const auto sb = detail::random_specs(cfg, rng, derive_seed(sample_seed, 2), 1, 2);
        return make_compare_sample(compose(hq, sa), compose(hq, sb), hq, prompt);
      }
      std::vector<DegradationSpec> specs;
      if (!rng.bernoulli(cfg.clean_fraction)) specs = detail::random_specs(cfg, rng, sample_seed, 1, 2);
      return kind == IqaKind::Score ? make_score_sample(hq, specs, prompt) : make_describe_sample(hq, specs, prompt);
    }
  }
  fail(ErrorKind::InvalidArgument, "unknown partition");
}

inline Corpus synthesize_corpus(const CorpusConfig& cfg) {
  Corpus corpus;
  for (const auto& [partition, count] : cfg.counts) {
    require(count >= 0, ErrorKind::InvalidArgument, "negative sample count");
    auto& out = corpus[partition];
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(synthesize_sample(cfg, partition, i));
  }
  return corpus;
}

}  // namespace motir
