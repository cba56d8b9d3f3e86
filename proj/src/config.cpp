// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fusetrack {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& v) {
  std::size_t pos = 0;
  const double d = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return d;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw std::invalid_argument("not an unsigned integer");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false");
}

Modality to_modality(const std::string& v) {
  if (v == "rgb") return Modality::rgb;
  if (v == "thermal") return Modality::thermal;
  throw std::invalid_argument("expected rgb or thermal");
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define FT_SIZE(KEY, EXPR)                                                      \
  Field {                                                                       \
    KEY, [](const RunConfig& c) { return std::to_string(c.EXPR); },             \
        [](RunConfig& c, const std::string& v) { c.EXPR = static_cast<std::size_t>(to_u64(v)); } \
  }
#define FT_U64(KEY, EXPR)                                                       \
  Field {                                                                       \
    KEY, [](const RunConfig& c) { return std::to_string(c.EXPR); },             \
        [](RunConfig& c, const std::string& v) { c.EXPR = to_u64(v); }          \
  }
#define FT_DOUBLE(KEY, EXPR)                                                    \
  Field {                                                                       \
    KEY, [](const RunConfig& c) { return fmt_double(c.EXPR); },                 \
        [](RunConfig& c, const std::string& v) { c.EXPR = to_double(v); }       \
  }
#define FT_BOOL(KEY, EXPR)                                                      \
  Field {                                                                       \
    KEY, [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.EXPR = to_bool(v); }         \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      FT_SIZE("model.patch", model.embedding.patch),
      FT_SIZE("model.dim", model.embedding.dim),
      FT_SIZE("model.template_size", model.embedding.template_side),
      FT_SIZE("model.search_size", model.embedding.search_side),
      FT_BOOL("model.dual_embedding", model.embedding.dual),
      FT_SIZE("model.depth", model.depth),
      FT_SIZE("model.heads", model.heads),
      FT_SIZE("model.head_channels", model.head_channels),
      FT_SIZE("model.reliability_channels", model.reliability_channels),
      Field{"model.variant", [](const RunConfig& c) { return std::string(variant_name(c.model.variant)); },
            [](RunConfig& c, const std::string& v) { c.model.variant = parse_variant(v); }},
      FT_BOOL("model.reliability_grad_to_backbone", model.reliability_grad_to_backbone),

      FT_DOUBLE("train.lr_backbone", train.optimizer.lr_backbone),
      FT_DOUBLE("train.lr_other", train.optimizer.lr_other),
      FT_DOUBLE("train.weight_decay", train.optimizer.weight_decay),
      FT_DOUBLE("train.beta1", train.optimizer.beta1),
      FT_DOUBLE("train.beta2", train.optimizer.beta2),
      FT_DOUBLE("train.epsilon", train.optimizer.epsilon),
      FT_SIZE("train.batch", train.batch),
      FT_SIZE("train.steps", train.steps),
      FT_SIZE("train.warmup_steps", train.warmup_steps),
      FT_DOUBLE("train.lambda_giou", train.weights.giou),
      FT_DOUBLE("train.lambda_l1", train.weights.l1),
      FT_U64("train.seed", train.seed),

      FT_U64("data.seed", data.scene.seed),
      FT_SIZE("data.frames", data.scene.num_frames),
      FT_SIZE("data.width", data.scene.width),
      FT_SIZE("data.height", data.scene.height),
      FT_DOUBLE("data.target_min", data.scene.target_min),
      FT_DOUBLE("data.target_max", data.scene.target_max),
      FT_DOUBLE("data.max_speed", data.scene.max_speed),
      FT_DOUBLE("data.acceleration", data.scene.acceleration),
      FT_BOOL("data.distractor", data.scene.distractor),
      FT_SIZE("data.sequences", data.sequences),
      FT_DOUBLE("data.degrade_probability", data.degrade_probability),
      Field{"data.kinds",
            [](const RunConfig& c) {
              std::string s;
              for (auto k : c.data.kinds) s += (s.empty() ? "" : ",") + std::string(degradation_name(k));
              return s;
            },
            [](RunConfig& c, const std::string& v) {
              c.data.kinds.clear();
              if (v.empty()) return;
              for (const auto& k : split(v, ',')) c.data.kinds.push_back(parse_degradation(k));
            }},
      FT_SIZE("data.max_gap", data.max_gap),
      FT_DOUBLE("data.center_jitter", data.center_jitter),
      FT_DOUBLE("data.scale_jitter", data.scale_jitter),
      Field{"data.permanent",
            [](const RunConfig& c) {
              if (!c.data.permanent) return std::string("none");
              return std::string(modality_name(c.data.permanent->first)) + ":" +
                     degradation_name(c.data.permanent->second);
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "none") {
                c.data.permanent.reset();
                return;
              }
              const auto parts = split(v, ':');
              if (parts.size() != 2) throw std::invalid_argument("expected none or <modality>:<kind>");
              c.data.permanent = std::make_pair(to_modality(parts[0]), parse_degradation(parts[1]));
            }},
      FT_DOUBLE("data.template_factor", template_factor),
      FT_DOUBLE("data.search_factor", search_factor),

      FT_DOUBLE("eval.tau", eval.tau),
      FT_SIZE("eval.sequences", eval.held_out.sequences),
      FT_U64("eval.seed", eval.held_out.seed),
      FT_SIZE("eval.span_min", eval.held_out.span_min),
      FT_SIZE("eval.span_max", eval.held_out.span_max),
      FT_SIZE("eval.span_start_min", eval.held_out.span_start_min),
      Field{"eval.kind", [](const RunConfig& c) { return std::string(degradation_name(c.eval.held_out.kind)); },
            [](RunConfig& c, const std::string& v) { c.eval.held_out.kind = parse_degradation(v); }},

      FT_BOOL("inference.hanning", hanning),

      Field{"bench.dims",
            [](const RunConfig& c) {
              std::string s;
              for (auto d : c.bench.dims) s += (s.empty() ? "" : ",") + std::to_string(d);
              return s;
            },
            [](RunConfig& c, const std::string& v) {
              c.bench.dims.clear();
              for (const auto& d : split(v, ',')) c.bench.dims.push_back(static_cast<std::size_t>(to_u64(d)));
            }},
      FT_SIZE("bench.warmup", bench.warmup),
      FT_SIZE("bench.samples", bench.samples),
      FT_U64("bench.seed", bench.seed),
  };
  return table;
}

#undef FT_SIZE
#undef FT_U64
#undef FT_DOUBLE
#undef FT_BOOL

const Field* find_field(const std::string& key) {
  static const auto index = [] {
    std::map<std::string, const Field*> m;
    for (const auto& f : fields()) m[f.key] = &f;
    return m;
  }();
  const auto it = index.find(key);
  return it == index.end() ? nullptr : it->second;
}

void apply_text(RunConfig& c, const std::string& text, const std::string& required_prefix) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (f == nullptr || key.rfind(required_prefix, 0) != 0)
      throw ConfigError("line " + std::to_string(n) + ": unknown key '" + key + "'");
    try {
      f->set(c, value);
    } catch (const std::exception& e) {
      throw ConfigError("line " + std::to_string(n) + ": invalid value '" + value + "' for " + key + " (" +
                        e.what() + ")");
    }
  }
}

std::string write_fields(const RunConfig& c, const std::string& prefix) {
  std::string out;
  for (const auto& f : fields()) {
    if (f.key.rfind(prefix, 0) == 0) out += f.key + "=" + f.get(c) + "\n";
  }
  return out;
}

}  // namespace

CropConfig RunConfig::crop() const {
  return {template_factor, search_factor, model.embedding.template_side, model.embedding.search_side};
}

void RunConfig::validate() const {
  auto wrap = [](const char* key, const auto& check) {
    try {
      check();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(std::string(key) + ": " + e.what());
    }
  };
  wrap("model", [&] { model.validate(); });
  wrap("data.template_factor", [&] { crop().validate(); });
  if (train.batch == 0) throw ConfigError("train.batch: must be at least 1");
  if (data.sequences == 0) throw ConfigError("data.sequences: must be at least 1");
  if (data.degrade_probability < 0.0 || data.degrade_probability > 1.0)
    throw ConfigError("data.degrade_probability: must lie in [0, 1]");
  if (data.degrade_probability > 0.0 && data.kinds.empty())
    throw ConfigError("data.kinds: empty while data.degrade_probability > 0");
  if (!(eval.tau > 0.0)) throw ConfigError("eval.tau: must be positive");
  if (bench.samples < 30) throw ConfigError("bench.samples: at least 30 timed samples are required");
  if (bench.warmup < 10) throw ConfigError("bench.warmup: at least 10 warmup runs are required");
  if (bench.dims.empty()) throw ConfigError("bench.dims: empty");
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  apply_text(c, text, "");
  c.eval.held_out.scene = c.data.scene;
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const RunConfig& config) { return write_fields(config, ""); }

std::string model_config_to_text(const ModelConfig& config) {
  RunConfig c;
  c.model = config;
  return write_fields(c, "model.");
}

ModelConfig parse_model_config(const std::string& text) {
  RunConfig c;
  apply_text(c, text, "model.");
  return c.model;
}

std::string config_provenance(const RunConfig& config) {
  std::string out;
  std::istringstream in(config_to_text(config));
  std::string line;
  while (std::getline(in, line)) out += "# " + line + "\n";
  return out;
}

SampleSource make_training_source(const RunConfig& config) {
  Curriculum data = config.data;
  return SampleSource(std::move(data), config.crop(), mix_seed(config.train.seed, 0x5a3e));
}

TrackerModel make_model(const RunConfig& config) { return TrackerModel::create(config.model, config.train.seed); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace fusetrack
