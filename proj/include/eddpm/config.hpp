#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "batch.hpp"
#include "error.hpp"
#include "nets.hpp"
#include "schedule.hpp"
#include "synthdata.hpp"

namespace eddpm {

enum class Objective { Eddpm, Vae };

inline const char* to_string(Objective o) { return o == Objective::Vae ? "vae" : "eddpm"; }

/// Everything that determines a training run. Field names double as config-file
/// keys and CLI flags.
struct TrainingConfig {
  DataKind data_kind = DataKind::Continuous;
  Objective objective = Objective::Eddpm;

  // architecture; latent_dim 0 resolves to 4 (continuous) or 30 (sequence)
  std::size_t data_dim = 2;
  std::size_t seq_len = 20;
  std::size_t vocab = 20;
  std::size_t latent_dim = 0;
  std::size_t hidden = 64;
  std::size_t eps_hidden = 64;
  std::size_t eps_blocks = 2;
  std::size_t time_dim = 16;
  std::size_t regressor_hidden = 32;

  // objective
  double w = 1.0;
  std::optional<double> w_protein;
  GammaMode gamma_mode = GammaMode::Simplified;
  bool per_example_s = false;

  // schedule; beta_start/beta_end 0 resolve to the rescaled DDPM defaults
  std::size_t steps = 50;
  double beta_start = 0.0;
  double beta_end = 0.0;
  double beta0 = 0.0;
  SigmaMode sigma_mode = SigmaMode::PosteriorVariance;

  // optimisation
  double learning_rate = 1e-4;
  std::size_t batch_size = 100;
  std::size_t epochs_warmup = 0;
  std::size_t epochs_main = 10;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;

  std::size_t resolved_latent_dim() const {
    if (latent_dim != 0) return latent_dim;
    return data_kind == DataKind::Sequence ? 30 : 4;
  }
  double resolved_beta_start() const { return beta_start > 0 ? beta_start : default_beta_start(steps); }
  double resolved_beta_end() const { return beta_end > 0 ? beta_end : default_beta_end(steps); }

  ArchConfig arch() const {
    ArchConfig a;
    a.kind = data_kind;
    a.data_dim = data_dim;
    a.seq_len = seq_len;
    a.vocab = vocab;
    a.latent_dim = resolved_latent_dim();
    a.hidden = hidden;
    a.eps_hidden = eps_hidden;
    a.eps_blocks = eps_blocks;
    a.time_dim = time_dim;
    a.regressor = w_protein.has_value();
    a.regressor_hidden = regressor_hidden;
    a.logvar_head = objective == Objective::Vae;
    return a;
  }

  NoiseSchedule schedule() const {
    return linear_schedule(steps, resolved_beta_start(), resolved_beta_end(), beta0, sigma_mode);
  }

  void validate() const {
    if (!(w > 0)) throw ConfigError("config: w must be positive");
    if (w_protein && !(*w_protein > 0)) throw ConfigError("config: w_protein must be positive");
    if (!(learning_rate > 0)) throw ConfigError("config: learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
    if (w_protein && data_kind != DataKind::Sequence)
      throw ConfigError("config: the fitness regressor needs sequence data");
    if (w_protein && objective == Objective::Vae)
      throw ConfigError("config: the fitness regressor is only trained with the eddpm objective");
    arch().validate();
    (void)schedule();
  }

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<std::string(const TrainingConfig&)> get;
  std::function<void(TrainingConfig&, const std::string&)> set;
};

inline std::uint64_t parse_config_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' is out of range: '" + v + "'");
  }
}

inline double parse_config_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d))
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return d;
}

inline bool parse_config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true|false, got '" + v + "'");
}

template <typename T>
ConfigField size_field(const char* key, T TrainingConfig::*m) {
  return {key, [m](const TrainingConfig& c) { return std::to_string(c.*m); },
          [m, key](TrainingConfig& c, const std::string& v) { c.*m = static_cast<T>(parse_config_uint(key, v)); }};
}

inline ConfigField double_field(const char* key, double TrainingConfig::*m) {
  return {key, [m](const TrainingConfig& c) { return format_double(c.*m); },
          [m, key](TrainingConfig& c, const std::string& v) { c.*m = parse_config_double(key, v); }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      {"data_kind", [](const TrainingConfig& c) { return std::string(to_string(c.data_kind)); },
       [](TrainingConfig& c, const std::string& v) { c.data_kind = parse_data_kind(v); }},
      {"objective", [](const TrainingConfig& c) { return std::string(to_string(c.objective)); },
       [](TrainingConfig& c, const std::string& v) {
         if (v == "eddpm") c.objective = Objective::Eddpm;
         else if (v == "vae") c.objective = Objective::Vae;
         else throw ConfigError("config: objective must be eddpm|vae, got '" + v + "'");
       }},
      size_field("data_dim", &TrainingConfig::data_dim),
      size_field("seq_len", &TrainingConfig::seq_len),
      size_field("vocab", &TrainingConfig::vocab),
      size_field("latent_dim", &TrainingConfig::latent_dim),
      size_field("hidden", &TrainingConfig::hidden),
      size_field("eps_hidden", &TrainingConfig::eps_hidden),
      size_field("eps_blocks", &TrainingConfig::eps_blocks),
      size_field("time_dim", &TrainingConfig::time_dim),
      size_field("regressor_hidden", &TrainingConfig::regressor_hidden),
      double_field("w", &TrainingConfig::w),
      {"w_protein", [](const TrainingConfig& c) { return c.w_protein ? format_double(*c.w_protein) : "none"; },
       [](TrainingConfig& c, const std::string& v) {
         if (v == "none") c.w_protein.reset();
         else c.w_protein = parse_config_double("w_protein", v);
       }},
      {"gamma_mode", [](const TrainingConfig& c) { return std::string(to_string(c.gamma_mode)); },
       [](TrainingConfig& c, const std::string& v) {
         if (v == "exact") c.gamma_mode = GammaMode::Exact;
         else if (v == "simplified") c.gamma_mode = GammaMode::Simplified;
         else throw ConfigError("config: gamma_mode must be exact|simplified, got '" + v + "'");
       }},
      {"per_example_s", [](const TrainingConfig& c) { return std::string(c.per_example_s ? "true" : "false"); },
       [](TrainingConfig& c, const std::string& v) { c.per_example_s = parse_config_bool("per_example_s", v); }},
      size_field("steps", &TrainingConfig::steps),
      double_field("beta_start", &TrainingConfig::beta_start),
      double_field("beta_end", &TrainingConfig::beta_end),
      double_field("beta0", &TrainingConfig::beta0),
      {"sigma_mode", [](const TrainingConfig& c) { return std::string(to_string(c.sigma_mode)); },
       [](TrainingConfig& c, const std::string& v) {
         if (v == "posterior") c.sigma_mode = SigmaMode::PosteriorVariance;
         else if (v == "beta") c.sigma_mode = SigmaMode::Beta;
         else throw ConfigError("config: sigma_mode must be posterior|beta, got '" + v + "'");
       }},
      double_field("learning_rate", &TrainingConfig::learning_rate),
      size_field("batch_size", &TrainingConfig::batch_size),
      size_field("epochs_warmup", &TrainingConfig::epochs_warmup),
      size_field("epochs_main", &TrainingConfig::epochs_main),
      size_field("checkpoint_every", &TrainingConfig::checkpoint_every),
      size_field("seed", &TrainingConfig::seed),
  };
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::config_fields()) keys.push_back(f.key);
  return keys;
}

/// Sets one key; unknown keys are rejected.
inline void set_config_value(TrainingConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

inline std::string get_config_value(const TrainingConfig& cfg, const std::string& key) {
  for (const auto& f : detail::config_fields())
    if (f.key == key) return f.get(cfg);
  throw ConfigError("config: unknown key '" + key + "'");
}

/// `key = value` lines; `#` starts a comment.
inline TrainingConfig parse_config(std::istream& is, TrainingConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline TrainingConfig parse_config_text(const std::string& text, TrainingConfig cfg = {}) {
  std::istringstream is(text);
  return parse_config(is, std::move(cfg));
}

inline TrainingConfig load_config(const std::filesystem::path& path, TrainingConfig cfg = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path.string() + "'");
  return parse_config(is, std::move(cfg));
}

/// Canonical text form: every key, fixed order. parse_config_text(to_text(c)) == c.
inline std::string config_to_text(const TrainingConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace eddpm
