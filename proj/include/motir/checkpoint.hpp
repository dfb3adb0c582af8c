#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "motir/error.hpp"
#include "motir/trainer.hpp"

namespace motir {

using json = nlohmann::ordered_json;

inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'T', 'I', 'R', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// JSON views of configs

inline json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},   {"n_blocks", c.n_blocks},       {"n_heads", c.n_heads}, {"vocab_size", c.vocab_size},
          {"patch", c.patch},       {"max_seq_len", c.max_seq_len}, {"ff_mult", c.ff_mult}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_blocks = j.at("n_blocks").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.patch = j.at("patch").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.ff_mult = j.at("ff_mult").get<int>();
  return c;
}

inline json to_json(const RecipePhase& p) {
  json ratios = json::object();
  for (const auto& [part, r] : p.ratios) ratios[std::string(to_string(part))] = r;
  json groups = json::array();
  for (auto g : p.trainable) groups.push_back(std::string(to_string(g)));
  return {{"name", p.name}, {"steps", p.steps}, {"warmup_steps", p.warmup_steps}, {"ema_ratio", p.ema_ratio},
          {"lr", p.lr},     {"ratios", ratios}, {"trainable", groups},         {"loss_mode", to_string(p.loss_mode)}};
}

inline RecipePhase phase_from_json(const json& j) {
  RecipePhase p;
  p.name = j.at("name").get<std::string>();
  p.steps = j.at("steps").get<int>();
  p.warmup_steps = j.at("warmup_steps").get<int>();
  p.ema_ratio = j.at("ema_ratio").get<double>();
  p.lr = j.at("lr").get<double>();
  for (const auto& [k, v] : j.at("ratios").items()) p.ratios[parse_partition(k)] = v.get<double>();
  for (const auto& g : j.at("trainable")) p.trainable.insert(parse_group(g.get<std::string>()));
  p.loss_mode = parse_loss_mode(j.at("loss_mode").get<std::string>());
  return p;
}

inline json to_json(const Recipe& r) {
  json phases = json::array();
  for (const auto& p : r.phases) phases.push_back(to_json(p));
  const auto& o = r.optimizer;
  const auto& l = r.loss;
  return {{"phases", phases},
          {"optimizer",
           {{"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}, {"weight_decay", o.weight_decay},
            {"clip_norm", o.clip_norm}}},
          {"loss",
           {{"lambda", l.lambda}, {"drop_text", l.drop_text}, {"drop_vit", l.drop_vit},
            {"drop_cleanvae", l.drop_cleanvae}, {"shift", l.shift}}}};
}

inline Recipe recipe_from_json(const json& j) {
  Recipe r;
  for (const auto& p : j.at("phases")) r.phases.push_back(phase_from_json(p));
  const auto& o = j.at("optimizer");
  r.optimizer = {o.at("beta1").get<double>(), o.at("beta2").get<double>(), o.at("eps").get<double>(),
                 o.at("weight_decay").get<double>(), o.at("clip_norm").get<double>()};
  const auto& l = j.at("loss");
  r.loss.lambda = l.at("lambda").get<double>();
  r.loss.drop_text = l.at("drop_text").get<double>();
  r.loss.drop_vit = l.at("drop_vit").get<double>();
  r.loss.drop_cleanvae = l.at("drop_cleanvae").get<double>();
  r.loss.shift = l.at("shift").get<double>();
  return r;
}

inline json to_json(const CounterRng& r) { return {{"key", r.key()}, {"counter", r.counter()}}; }

inline CounterRng rng_from_json(const json& j) {
  return CounterRng(j.at("key").get<std::uint64_t>(), j.at("counter").get<std::uint64_t>());
}

// ---------------------------------------------------------------------------
// Archive

namespace detail {

inline std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001B3ULL;
  }
  return h;
}

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else return "float64";
}

}  // namespace detail

/// Layout: 8-byte magic, u32 version, u64 header length, JSON header, then the
/// params, ema, m and v tensors as raw little-endian values, then a u64 FNV-1a
/// checksum of everything before it.
template <typename T>
void save_checkpoint(const TrainState<T>& s, const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");
  json tensors = json::array();
  for (const auto& t : s.params)
    tensors.push_back({{"name", t.name}, {"group", to_string(t.group)}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  json groups = json::array();
  for (auto g : kAllGroups) groups.push_back(std::string(to_string(g)));
  const json header = {{"version", kCheckpointVersion},
                       {"dtype", detail::dtype_name<T>()},
                       {"model", to_json(s.params.config())},
                       {"recipe", to_json(s.recipe)},
                       {"groups", groups},
                       {"seed", s.seed},
                       {"phase", s.phase},
                       {"step", s.step},
                       {"global_step", s.global_step},
                       {"loss_rng", to_json(s.loss_rng)},
                       {"data_rng", to_json(s.data_rng)},
                       {"tensors", tensors}};
  std::string buf(kCheckpointMagic, sizeof kCheckpointMagic);
  auto put = [&buf](const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); };
  put(&kCheckpointVersion, sizeof kCheckpointVersion);
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  put(&len, sizeof len);
  buf += text;
  for (const auto* store : {&s.params, &s.ema, &s.m, &s.v})
    for (const auto& t : *store) put(t.value.data(), static_cast<std::size_t>(t.value.size()) * sizeof(T));
  const std::uint64_t sum = detail::fnv1a(buf.data(), buf.size());
  put(&sum, sizeof sum);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write checkpoint '" + path + "'");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    require(out.good(), ErrorKind::Io, "short write to '" + path + "'");
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorKind::Io, "cannot move checkpoint into place at '" + path + "'");
}

/// Restores a state. When `expected` is given, every model field must match it.
template <typename T>
TrainState<T> load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open checkpoint '" + path + "'");
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t fixed = sizeof kCheckpointMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  require(buf.size() >= fixed + sizeof(std::uint64_t) && std::memcmp(buf.data(), kCheckpointMagic, 8) == 0,
          ErrorKind::Format, "'" + path + "' is not a checkpoint");
  std::uint32_t version = 0;
  std::memcpy(&version, buf.data() + 8, sizeof version);
  require(version == kCheckpointVersion, ErrorKind::Format,
          "checkpoint version " + std::to_string(version) + " unsupported (expected " +
              std::to_string(kCheckpointVersion) + ")");
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + buf.size() - sizeof stored, sizeof stored);
  require(detail::fnv1a(buf.data(), buf.size() - sizeof stored) == stored, ErrorKind::Format,
          "checkpoint '" + path + "' is corrupt (checksum mismatch)");
  std::uint64_t len = 0;
  std::memcpy(&len, buf.data() + 12, sizeof len);
  require(fixed + len <= buf.size() - sizeof stored, ErrorKind::Format, "checkpoint header overruns the file");

  json h;
  try {
    h = json::parse(buf.begin() + static_cast<std::ptrdiff_t>(fixed),
                    buf.begin() + static_cast<std::ptrdiff_t>(fixed + len));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("checkpoint header: ") + e.what());
  }
  require(h.at("dtype").get<std::string>() == detail::dtype_name<T>(), ErrorKind::Format,
          "checkpoint dtype " + h.at("dtype").get<std::string>() + " does not match " + detail::dtype_name<T>());

  const ModelConfig cfg = model_config_from_json(h.at("model"));
  if (expected) {
    const json a = to_json(cfg), b = to_json(*expected);
    for (const auto& [k, v] : b.items())
      require(a.at(k) == v, ErrorKind::InvalidArgument,
              "checkpoint field " + k + " = " + a.at(k).dump() + " but the config expects " + v.dump());
  }

  TrainState<T> s;
  s.recipe = recipe_from_json(h.at("recipe"));
  s.params = ParameterStore<T>(cfg);
  const auto& tensors = h.at("tensors");
  require(tensors.size() == s.params.size(), ErrorKind::Format, "checkpoint tensor count does not match the model");
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    const auto& t = tensors[i];
    const auto& p = s.params[i];
    require(t.at("name").get<std::string>() == p.name && t.at("group").get<std::string>() == to_string(p.group) &&
                t.at("rows").get<Eigen::Index>() == p.value.rows() && t.at("cols").get<Eigen::Index>() == p.value.cols(),
            ErrorKind::Format, "checkpoint tensor " + std::to_string(i) + " does not match '" + p.name + "'");
  }
  s.ema = s.params.zeros_like();
  s.m = s.params.zeros_like();
  s.v = s.params.zeros_like();
  std::size_t off = fixed + len;
  const std::size_t end = buf.size() - sizeof stored;
  for (auto* store : {&s.params, &s.ema, &s.m, &s.v})
    for (auto& t : *store) {
      const std::size_t n = static_cast<std::size_t>(t.value.size()) * sizeof(T);
      require(off + n <= end, ErrorKind::Format, "checkpoint truncated in tensor '" + t.name + "'");
      std::memcpy(t.value.data(), buf.data() + off, n);
      off += n;
    }
  require(off == end, ErrorKind::Format, "trailing bytes in checkpoint");

  s.seed = h.at("seed").get<std::uint64_t>();
  s.phase = h.at("phase").get<int>();
  s.step = h.at("step").get<int>();
  s.global_step = h.at("global_step").get<std::int64_t>();
  s.loss_rng = rng_from_json(h.at("loss_rng"));
  s.data_rng = rng_from_json(h.at("data_rng"));
  require(s.phase >= 0 && s.phase < static_cast<int>(s.recipe.phases.size()), ErrorKind::Format,
          "checkpoint phase index out of range");
  return s;
}

/// The header JSON of a checkpoint (metadata inspection without tensors).
inline json checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open checkpoint '" + path + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  require(in.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0, ErrorKind::Format, "'" + path + "' is not a checkpoint");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  require(in.good(), ErrorKind::Format, "checkpoint header truncated");
  return json::parse(text);
}

}  // namespace motir
