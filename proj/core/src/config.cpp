#include "sprm/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "sprm/error.hpp"

namespace sprm {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item)));
  if (out.empty()) throw ConfigError("expected a comma-separated list of numbers");
  return out;
}

std::string num(double v) { return fmt::format("{}", v); }

std::string list(const std::vector<synth::PhaseSpec>& phases, double synth::PhaseSpec::*field) {
  std::string out;
  for (std::size_t i = 0; i < phases.size(); ++i) out += (i ? "," : "") + num(phases[i].*field);
  return out;
}

// Per-phase list keys. The phase count follows the first list seen; later
// lists must match it.
void set_list(std::vector<synth::PhaseSpec>& phases, double synth::PhaseSpec::*field, const std::string& v) {
  const auto values = to_list(v);
  if (field == &synth::PhaseSpec::mean_duration) {
    phases.resize(values.size());
  } else if (values.size() == 1) {
    for (auto& p : phases) p.*field = values[0];
    return;
  } else if (values.size() != phases.size()) {
    throw ConfigError(fmt::format("expected {} per-phase values, got {}", phases.size(), values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) phases[i].*field = values[i];
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Key>& table() {
  static const std::vector<Key> keys = {
      {"seed", [](const RunConfig& c) { return fmt::format("{}", c.seed); },
       [](RunConfig& c, const std::string& v) { c.apply_seed(to_u64(v)); }},
#define SPRM_SIZE(key, field)                                              \
  {key, [](const RunConfig& c) { return fmt::format("{}", c.field); }, \
   [](RunConfig& c, const std::string& v) { c.field = to_size(v); }}
#define SPRM_REAL(key, field) \
  {key, [](const RunConfig& c) { return num(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_double(v); }}
      SPRM_SIZE("model.input_dim", model.input_dim),
      SPRM_SIZE("model.stage1_dim", model.stage1_dim),
      SPRM_SIZE("model.refine_dim", model.refine_dim),
      SPRM_SIZE("model.layers", model.layers),
      SPRM_SIZE("model.stages", model.stages),
      SPRM_SIZE("model.num_classes", model.num_classes),
      SPRM_SIZE("model.window", model.window),
      SPRM_SIZE("model.stride", model.stride),
      SPRM_SIZE("model.state_dim", model.state_dim),
      SPRM_SIZE("model.expand", model.expand),
      SPRM_REAL("model.dropout", model.dropout),
      {"model.causal", [](const RunConfig& c) { return std::string(c.model.causal ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.model.causal = to_bool(v); }},
      {"model.branches", [](const RunConfig& c) { return std::string(to_string(c.model.branches)); },
       [](RunConfig& c, const std::string& v) { c.model.branches = parse_branch_mode(v); }},
      {"model.conv", [](const RunConfig& c) { return std::string(to_string(c.model.conv)); },
       [](RunConfig& c, const std::string& v) { c.model.conv = parse_conv_mode(v); }},
      SPRM_REAL("train.base_lr", train.base_lr),
      SPRM_REAL("train.weight_decay", train.weight_decay),
      SPRM_SIZE("train.warmup_epochs", train.warmup_epochs),
      SPRM_SIZE("train.total_epochs", train.total_epochs),
      SPRM_REAL("train.smoothing_weight", train.smoothing_weight),
      SPRM_REAL("train.smoothing_clip", train.smoothing_clip),
      SPRM_REAL("train.min_lr_ratio", train.min_lr_ratio),
      SPRM_REAL("train.clip_norm", train.clip_norm),
      {"train.schedule_unit", [](const RunConfig& c) { return std::string(to_string(c.train.schedule_unit)); },
       [](RunConfig& c, const std::string& v) { c.train.schedule_unit = parse_schedule_unit(v); }},
      SPRM_REAL("train.target_accuracy", train.target_accuracy),
      {"synth.mean_durations", [](const RunConfig& c) { return list(c.synth.phases, &synth::PhaseSpec::mean_duration); },
       [](RunConfig& c, const std::string& v) { set_list(c.synth.phases, &synth::PhaseSpec::mean_duration, v); }},
      {"synth.dispersion", [](const RunConfig& c) { return list(c.synth.phases, &synth::PhaseSpec::dispersion); },
       [](RunConfig& c, const std::string& v) { set_list(c.synth.phases, &synth::PhaseSpec::dispersion, v); }},
      {"synth.skip", [](const RunConfig& c) { return list(c.synth.phases, &synth::PhaseSpec::skip); },
       [](RunConfig& c, const std::string& v) { set_list(c.synth.phases, &synth::PhaseSpec::skip, v); }},
      {"synth.revisit", [](const RunConfig& c) { return list(c.synth.phases, &synth::PhaseSpec::revisit); },
       [](RunConfig& c, const std::string& v) { set_list(c.synth.phases, &synth::PhaseSpec::revisit, v); }},
      SPRM_SIZE("synth.feature_dim", synth.feature_dim),
      SPRM_REAL("synth.separation", synth.separation),
      SPRM_REAL("synth.drift", synth.drift),
      SPRM_REAL("synth.drift_correlation", synth.drift_correlation),
      SPRM_REAL("synth.noise", synth.noise),
      SPRM_SIZE("synth.sequence_length", synth.sequence_length),
      {"synth.fps", [](const RunConfig& c) { return fmt::format("{}", c.synth.fps); },
       [](RunConfig& c, const std::string& v) {
         const auto f = to_size(v);
         if (f == 0 || f > 0xffffffffu) throw ConfigError("fps must be in [1, 2^32)");
         c.synth.fps = static_cast<std::uint32_t>(f);
       }},
#undef SPRM_SIZE
#undef SPRM_REAL
  };
  return keys;
}

ParsedConfig parse_with(const std::string& text, const std::string& only_prefix) {
  ParsedConfig out;
  std::map<std::string, const Key*> by_name;
  for (const auto& k : table()) by_name[k.name] = &k;
  // Per-phase lists are applied after scalars so their order in the file
  // does not matter; mean_durations first since it fixes the phase count.
  const char* list_keys[] = {"synth.mean_durations", "synth.dispersion", "synth.skip", "synth.revisit"};
  std::map<std::string, std::pair<std::string, std::size_t>> lists;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("config line {}: expected 'key = value'", lineno));
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto it = by_name.find(key);
    if (it == by_name.end() || key.rfind(only_prefix, 0) != 0) {
      throw ConfigError(fmt::format("config line {}: unknown key '{}'", lineno, key));
    }
    if (!seen.insert(key).second) throw ConfigError(fmt::format("config line {}: duplicate key '{}'", lineno, key));
    if (value.empty()) throw ConfigError(fmt::format("config line {}: empty value for '{}'", lineno, key));
    if (std::find(std::begin(list_keys), std::end(list_keys), key) != std::end(list_keys)) {
      lists[key] = {value, lineno};
      continue;
    }
    try {
      it->second->set(out.config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("config line {}: {}: {}", lineno, key, e.what()));
    }
  }
  for (const char* key : list_keys) {
    const auto it = lists.find(key);
    if (it == lists.end()) continue;
    try {
      by_name[key]->set(out.config, it->second.first);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("config line {}: {}: {}", it->second.second, key, e.what()));
    }
  }
  for (const auto& k : table()) {
    if (std::string(k.name).rfind(only_prefix, 0) == 0 && !seen.count(k.name)) out.defaulted.push_back(k.name);
  }
  return out;
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t value) {
  seed = value;
  train.seed = value;
  synth.seed = value;
}

ParsedConfig parse_config(const std::string& text) { return parse_with(text, ""); }

ParsedConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : table()) out += fmt::format("{} = {}\n", k.name, k.get(config));
  return out;
}

std::string model_config_text(const ModelConfig& config) {
  RunConfig rc;
  rc.model = config;
  std::string out;
  for (const auto& k : table()) {
    if (std::string(k.name).rfind("model.", 0) == 0) out += fmt::format("{} = {}\n", k.name, k.get(rc));
  }
  return out;
}

ModelConfig parse_model_config(const std::string& text) { return parse_with(text, "model.").config.model; }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : table()) out.emplace_back(k.name);
  return out;
}

}  // namespace sprm
