#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "synthdata.hpp"
#include "tasks.hpp"
#include "trainer.hpp"

namespace eddpm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMissingFile = 3;

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

struct MissingFileError : Error {
  explicit MissingFileError(const std::string& what) : Error("missing-file", what) {}
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c = {"gen-data", "warmup",   "train",      "generate", "reconstruct", "interpolate",
                                             "edit",     "manipulate", "optimize", "eval",     "inspect"};
  return c;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_hash(const std::filesystem::path& p) { return hex64(fnv1a64(detail::read_file_bytes(p))); }

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("--" + what + " is required");
  if (!std::filesystem::is_regular_file(path)) throw MissingFileError(what + " file '" + path + "' does not exist");
}

/// Where a command writes. `--out` naming a file with the command's extension
/// writes that file plus `<out>.<name>` siblings; anything else is a directory.
struct OutputLayout {
  std::filesystem::path primary;
  std::filesystem::path manifest;
  std::filesystem::path base;
  bool directory = true;

  std::filesystem::path sibling(const std::string& name) const {
    return directory ? base / name : std::filesystem::path(base.string() + "." + name);
  }
};

inline OutputLayout resolve_output(const std::string& out, const std::string& default_name) {
  if (out.empty()) throw UsageError("--out is required");
  const auto ext = std::filesystem::path(default_name).extension();
  OutputLayout l;
  const std::filesystem::path p(out);
  if (p.extension() == ext && !std::filesystem::is_directory(p)) {
    l.directory = false;
    l.primary = l.base = p;
    l.manifest = l.sibling("manifest.json");
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  } else {
    l.base = p;
    std::filesystem::create_directories(p);
    l.primary = p / default_name;
    l.manifest = p / "manifest.json";
  }
  return l;
}

struct RunManifest {
  std::string command;
  std::optional<TrainingConfig> config;
  std::map<std::string, std::string> params;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::uint64_t seed = 0;
  double duration_s = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["seed"] = seed;
    j["duration_s"] = duration_s;
    j["params"] = params;
    if (config) {
      nlohmann::json c = nlohmann::json::object();
      for (const auto& k : config_keys()) c[k] = get_config_value(*config, k);
      j["config"] = c;
    }
    nlohmann::json in = nlohmann::json::object(), outj = nlohmann::json::object(), hashes = nlohmann::json::object();
    for (const auto& [k, v] : inputs) {
      in[k] = v;
      hashes[v] = file_hash(v);
    }
    for (const auto& [k, v] : outputs) {
      outj[k] = v;
      hashes[v] = file_hash(v);
    }
    j["inputs"] = in;
    j["outputs"] = outj;
    j["hashes"] = hashes;
    return j;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest '" + path.string() + "'");
    os << to_json().dump(2) << '\n';
  }
};

/// Samples from the checkpoint's prior: the diffusion prior for EDDPM, N(0, I)
/// for the VAE baseline.
inline Batch generate_samples(const Checkpoint& ck, std::size_t n, Rng& rng, const GenerateOptions& go = {}) {
  if (ck.config.objective == Objective::Vae) {
    if (go.sigma) throw ConfigError("--sigma applies to diffusion sampling only");
    return generate_standard_prior(ck.state, n, rng);
  }
  return generate(ck.state, ck.schedule, n, rng, go);
}

namespace detail {

inline std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("EDDPM_SEED");
  if (!s || !*s) return std::nullopt;
  const std::string v(s);
  if (v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("EDDPM_SEED must be a non-negative integer, got '" + v + "'");
  return std::stoull(v);
}

inline Dataset load_data(const std::string& path) {
  require_file(path, "data");
  return load_dataset(path);
}

inline Checkpoint load_ckpt(const std::string& path) {
  require_file(path, "ckpt");
  return load_checkpoint(path);
}

inline void check_data_matches(const Checkpoint& ck, const Dataset& ds) {
  if (ds.kind != ck.config.data_kind)
    throw ConfigError(std::string("dataset is ") + to_string(ds.kind) + " but the checkpoint expects " +
                      to_string(ck.config.data_kind));
  if (ds.samples.width != (ds.kind == DataKind::Sequence ? ck.config.seq_len : ck.config.data_dim))
    throw ShapeError("dataset sample width does not match the checkpoint");
}

inline void write_row_values(std::ostream& os, const Batch& b, std::size_t i) {
  if (b.kind == DataKind::Sequence) {
    os << tokens_to_string(b.seq(i));
    return;
  }
  bool first = true;
  for (double v : b.row(i)) {
    if (!first) os << ',';
    os << format_double(v);
    first = false;
  }
}

inline std::string value_header(const Batch& b, const std::string& prefix) {
  if (b.kind == DataKind::Sequence) return prefix;
  std::string h;
  for (std::size_t j = 0; j < b.width; ++j) h += (j ? "," : "") + prefix + "_x" + std::to_string(j);
  return h;
}

/// index,input...,output... rows; shared by reconstruct and edit.
inline void write_pairs(const std::filesystem::path& path, const std::vector<std::size_t>& index, const Batch& in,
                        const Batch& out, const std::vector<std::pair<std::string, std::vector<double>>>& extra = {}) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "index," << value_header(in, "input") << ',' << value_header(out, "output");
  for (const auto& [name, _] : extra) os << ',' << name;
  os << '\n';
  for (std::size_t i = 0; i < in.n; ++i) {
    os << index[i] << ',';
    write_row_values(os, in, i);
    os << ',';
    write_row_values(os, out, i);
    for (const auto& [_, col] : extra) os << ',' << format_double(col[i]);
    os << '\n';
  }
}

inline void write_samples(const std::filesystem::path& path, const Batch& b) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << (b.kind == DataKind::Sequence ? std::string("sequence") : value_header(b, "sample")) << '\n';
  for (std::size_t i = 0; i < b.n; ++i) {
    write_row_values(os, b, i);
    os << '\n';
  }
}

inline std::vector<std::size_t> limited(std::vector<std::size_t> idx, std::size_t limit) {
  if (limit && idx.size() > limit) idx.resize(limit);
  return idx;
}

/// Encoded training rows and labels, split 70/30 in dataset order.
struct ProbeSplit {
  std::vector<Latent> fit_x, held_x;
  std::vector<std::int32_t> fit_y, held_y;
};

inline ProbeSplit probe_split(const ModelState& st, const Dataset& ds) {
  const auto idx = ds.indices(Split::Train);
  const auto lat = rows_of(encode(st, ds.samples.select(idx)));
  const auto y = ds.labels_of(idx);
  const std::size_t cut = idx.size() * 7 / 10;
  ProbeSplit p;
  p.fit_x.assign(lat.begin(), lat.begin() + static_cast<std::ptrdiff_t>(cut));
  p.held_x.assign(lat.begin() + static_cast<std::ptrdiff_t>(cut), lat.end());
  p.fit_y.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(cut));
  p.held_y.assign(y.begin() + static_cast<std::ptrdiff_t>(cut), y.end());
  return p;
}

/// Mean latent of label-1 training rows minus that of label-0 rows, using the
/// first `per_side` rows of each class in dataset order (0 takes all).
inline Latent label_direction(const ModelState& st, const Dataset& ds, std::size_t per_side) {
  std::vector<std::size_t> pos_idx, neg_idx;
  for (auto i : ds.indices(Split::Train)) {
    auto& side = ds.labels[i] == 1 ? pos_idx : neg_idx;
    if (per_side == 0 || side.size() < per_side) side.push_back(i);
  }
  if (pos_idx.empty() || neg_idx.empty()) throw RangeError("edit: training split lacks one of the two labels");
  return attribute_direction(rows_of(encode(st, ds.samples.select(pos_idx))),
                             rows_of(encode(st, ds.samples.select(neg_idx))));
}

}  // namespace detail

/// Parsed state shared by the subcommand handlers.
struct Invocation {
  std::string command;
  std::string config_path, data_path, ckpt_path, init_path, out;
  std::map<std::string, std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string split = "test";
  std::size_t n = 0, limit = 0;
  std::string kind = "continuous";
  std::size_t components = 2, seq_len = 20, vocab = 20;
  std::optional<double> sigma;
  std::size_t a = 0, b = 1, points = 0;
  double alpha = 0.2;
  std::string mode = "slerp";
  double k = 1.0;
  int sign = 1;
  std::size_t per_side = 100;
  double magnitude = 0.1;
  bool refit = false;
  std::size_t starts = 60, steps = 100;
  double step_size = 0.1;
  std::optional<double> target;
  std::size_t permutations = 100;
  bool json = false;
  std::ostream* out_stream = &std::cout;

  std::uint64_t resolve_seed(std::uint64_t fallback) const {
    if (seed) return *seed;
    if (auto e = detail::env_seed()) return *e;
    return fallback;
  }

  /// Config file over defaults (seed defaulting to EDDPM_SEED), then flags.
  TrainingConfig resolve_config(TrainingConfig base = {}) const {
    if (auto e = detail::env_seed()) base.seed = *e;
    if (!config_path.empty()) {
      require_file(config_path, "config");
      base = load_config(config_path, base);
    }
    for (const auto& [k, v] : overrides) set_config_value(base, k, v);
    if (seed) base.seed = *seed;
    base.validate();
    return base;
  }
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline void finish(RunManifest& m, const OutputLayout& l, Clock::time_point t0) {
  m.duration_s = seconds_since(t0);
  m.save(l.manifest);
}

inline int cmd_gen_data(const Invocation& iv) {
  const auto t0 = Clock::now();
  const auto seed = iv.resolve_seed(0);
  const std::size_t n = iv.n ? iv.n : 2000;
  const auto kind = parse_data_kind(iv.kind);
  const Dataset ds = kind == DataKind::Continuous ? mixture2d(seed, n, iv.components)
                                                  : markov_sequences(seed, n, iv.seq_len, iv.vocab);
  const auto l = resolve_output(iv.out, "data.csv");
  save_dataset(ds, l.primary);
  RunManifest m;
  m.command = "gen-data";
  m.seed = seed;
  m.params = {{"kind", iv.kind}, {"n", std::to_string(n)}};
  if (kind == DataKind::Continuous) m.params["components"] = std::to_string(iv.components);
  else m.params["seq_len"] = std::to_string(iv.seq_len), m.params["vocab"] = std::to_string(iv.vocab);
  m.outputs = {{"data", l.primary.string()}};
  finish(m, l, t0);
  *iv.out_stream << "wrote " << ds.size() << " samples to " << l.primary.string() << '\n';
  return kExitOk;
}

inline void check_resume_compatible(const TrainingConfig& a, const TrainingConfig& b) {
  if (!(a.arch() == b.arch())) throw ConfigError("cannot change the architecture of an existing checkpoint");
  if (!(a.schedule() == b.schedule())) throw ConfigError("cannot change the noise schedule of an existing checkpoint");
  if (a.objective != b.objective || a.seed != b.seed || a.batch_size != b.batch_size)
    throw ConfigError("cannot change objective, seed or batch_size of an existing checkpoint");
}

inline int cmd_train(const Invocation& iv, bool warmup_only) {
  const auto t0 = Clock::now();
  const Dataset ds = load_data(iv.data_path);
  Checkpoint ck;
  RunManifest m;
  m.command = warmup_only ? "warmup" : "train";
  if (!iv.init_path.empty()) {
    ck = load_ckpt(iv.init_path);
    if (!iv.config_path.empty()) throw UsageError("--config cannot be combined with --init");
    TrainingConfig merged = ck.config;
    for (const auto& [k, v] : iv.overrides) set_config_value(merged, k, v);
    merged.validate();
    check_resume_compatible(ck.config, merged);
    ck.config = merged;
    m.inputs["init"] = iv.init_path;
  } else {
    ck = initial_checkpoint(iv.resolve_config());
  }
  const auto l = resolve_output(iv.out, "checkpoint.eddpm");
  TrainOptions opts;
  opts.checkpoint_path = l.primary;
  if (warmup_only)
    opts.max_steps = ck.config.epochs_warmup * steps_per_epoch(ds.indices(Split::Train).size(), ck.config.batch_size);
  const auto res = train(ck, ds, opts);
  const auto metrics_path = l.sibling("metrics.csv");
  save_metrics_csv(res.metrics, metrics_path);
  m.config = res.checkpoint.config;
  m.seed = res.checkpoint.config.seed;
  m.inputs["data"] = iv.data_path;
  m.outputs = {{"checkpoint", l.primary.string()}, {"metrics", metrics_path.string()}};
  finish(m, l, t0);
  *iv.out_stream << "step " << res.checkpoint.step << " checkpoint " << l.primary.string();
  if (!res.metrics.empty()) *iv.out_stream << " last_loss " << format_double(res.metrics.back().parts.total);
  *iv.out_stream << '\n';
  return kExitOk;
}

inline int cmd_generate(const Invocation& iv) {
  const auto t0 = Clock::now();
  const auto ck = load_ckpt(iv.ckpt_path);
  const auto seed = iv.resolve_seed(stream_seed(ck.config.seed, SeedStream::Eval));
  Rng rng(seed);
  GenerateOptions go;
  go.sigma = iv.sigma;
  const Batch out = generate_samples(ck, iv.n ? iv.n : 1000, rng, go);
  const auto l = resolve_output(iv.out, "samples.csv");
  write_samples(l.primary, out);
  RunManifest m;
  m.command = "generate";
  m.config = ck.config;
  m.seed = seed;
  m.params["n"] = std::to_string(out.n);
  if (iv.sigma) m.params["sigma"] = format_double(*iv.sigma);
  m.inputs["ckpt"] = iv.ckpt_path;
  m.outputs["samples"] = l.primary.string();
  finish(m, l, t0);
  *iv.out_stream << "wrote " << out.n << " samples to " << l.primary.string() << '\n';
  return kExitOk;
}

struct LoadedPair {
  Checkpoint ck;
  Dataset ds;
};

inline LoadedPair load_pair(const Invocation& iv) {
  LoadedPair p{load_ckpt(iv.ckpt_path), load_data(iv.data_path)};
  check_data_matches(p.ck, p.ds);
  return p;
}

inline RunManifest pair_manifest(const Invocation& iv, const LoadedPair& p) {
  RunManifest m;
  m.command = iv.command;
  m.config = p.ck.config;
  m.seed = p.ck.config.seed;
  m.inputs = {{"ckpt", iv.ckpt_path}, {"data", iv.data_path}};
  m.params["split"] = iv.split;
  return m;
}

inline int cmd_reconstruct_or_edit(const Invocation& iv, bool edit) {
  const auto t0 = Clock::now();
  const auto p = load_pair(iv);
  const auto idx = limited(p.ds.indices(parse_split(iv.split)), iv.limit);
  const Batch in = p.ds.samples.select(idx);
  Batch out;
  RunManifest m = pair_manifest(iv, p);
  if (edit) {
    const EditSpec spec{label_direction(p.ck.state, p.ds, iv.per_side), iv.k, iv.sign};
    out = arithmetic_edit(p.ck.state, in, spec);
    m.params["k"] = format_double(iv.k);
    m.params["sign"] = std::to_string(iv.sign);
    m.params["per_side"] = std::to_string(iv.per_side);
  } else {
    out = reconstruct(p.ck.state, in);
  }
  const auto l = resolve_output(iv.out, edit ? "edited.csv" : "reconstructed.csv");
  write_pairs(l.primary, idx, in, out);
  m.outputs["rows"] = l.primary.string();
  finish(m, l, t0);
  *iv.out_stream << "wrote " << in.n << " rows to " << l.primary.string() << '\n';
  return kExitOk;
}

inline int cmd_interpolate(const Invocation& iv) {
  const auto t0 = Clock::now();
  const auto p = load_pair(iv);
  const auto n = p.ds.size();
  if (iv.a >= n || iv.b >= n) throw RangeError("interpolate: --a/--b must index dataset rows (< " + std::to_string(n) + ")");
  const auto mode = parse_interp_mode(iv.mode);
  const std::vector<std::size_t> ends = {iv.a, iv.b};
  const auto lat = rows_of(encode(p.ck.state, p.ds.samples.select(ends)));
  std::vector<double> alphas;
  if (iv.points >= 2)
    for (std::size_t i = 0; i < iv.points; ++i) alphas.push_back(static_cast<double>(i) / static_cast<double>(iv.points - 1));
  else
    alphas.push_back(iv.alpha);
  std::vector<Latent> path;
  for (double al : alphas) path.push_back(interpolate(lat[0], lat[1], al, mode));
  const Batch out = decode(p.ck.state, stack_rows(path));
  const auto l = resolve_output(iv.out, "interpolated.csv");
  {
    std::ofstream os(l.primary);
    if (!os) throw IoError("cannot write '" + l.primary.string() + "'");
    os << "alpha," << value_header(out, "output") << '\n';
    for (std::size_t i = 0; i < out.n; ++i) {
      os << format_double(alphas[i]) << ',';
      write_row_values(os, out, i);
      os << '\n';
    }
  }
  RunManifest m = pair_manifest(iv, p);
  m.params = {{"a", std::to_string(iv.a)}, {"b", std::to_string(iv.b)}, {"mode", iv.mode}};
  if (iv.points >= 2) m.params["points"] = std::to_string(iv.points);
  else m.params["alpha"] = format_double(iv.alpha);
  m.outputs["rows"] = l.primary.string();
  finish(m, l, t0);
  *iv.out_stream << "wrote " << out.n << " rows to " << l.primary.string() << '\n';
  return kExitOk;
}

inline int cmd_manipulate(const Invocation& iv) {
  const auto t0 = Clock::now();
  auto p = load_pair(iv);
  auto& st = p.ck.state;
  std::optional<double> probe_auc;
  if (!st.classifier || iv.refit) {
    const auto ps = probe_split(st, p.ds);
    st.classifier = fit_latent_classifier(ps.fit_x, ps.fit_y);
    std::vector<double> scores;
    for (const auto& x : ps.held_x) scores.push_back(classify(*st.classifier, x));
    probe_auc = roc_auc(scores, ps.held_y);
  }
  const auto idx = limited(p.ds.indices(parse_split(iv.split)), iv.limit);
  const Batch in = p.ds.samples.select(idx);
  const Tensor z = encode(st, in);
  const ManipulationSpec spec{*st.classifier, iv.magnitude};
  const Tensor z2 = manipulate_latents(z, spec);
  const Batch out = decode(st, z2);
  std::vector<double> before, after;
  for (const auto& r : rows_of(z)) before.push_back(classify(*st.classifier, r));
  for (const auto& r : rows_of(z2)) after.push_back(classify(*st.classifier, r));
  const auto l = resolve_output(iv.out, "manipulated.csv");
  write_pairs(l.primary, idx, in, out, {{"score_before", before}, {"score_after", after}});
  const auto ck_path = l.sibling("classifier.eddpm");
  save_checkpoint(p.ck, ck_path);
  RunManifest m = pair_manifest(iv, p);
  m.params["magnitude"] = format_double(iv.magnitude);
  if (probe_auc) m.params["probe_auc"] = format_double(*probe_auc);
  m.outputs = {{"rows", l.primary.string()}, {"checkpoint", ck_path.string()}};
  finish(m, l, t0);
  *iv.out_stream << "wrote " << in.n << " rows to " << l.primary.string();
  if (probe_auc) *iv.out_stream << " probe_auc " << format_double(*probe_auc);
  *iv.out_stream << '\n';
  return kExitOk;
}

inline int cmd_optimize(const Invocation& iv) {
  const auto t0 = Clock::now();
  const auto p = load_pair(iv);
  if (p.ds.kind != DataKind::Sequence) throw ConfigError("optimize needs a sequence dataset");
  const auto& st = p.ck.state;
  const auto idx = limited(p.ds.indices(parse_split(iv.split)), iv.starts);
  const Batch in = p.ds.samples.select(idx);
  double target = 0;
  if (iv.target) {
    target = *iv.target;
  } else {
    const auto tr = p.ds.indices(Split::Train);
    if (tr.empty()) throw RangeError("optimize: no training rows to derive --target from");
    target = -1e300;
    for (auto i : tr) target = std::max(target, p.ds.fitness[i]);
    target += 1.0;
  }
  const auto starts = rows_of(encode(st, in));
  const Batch rec = decode(st, stack_rows(starts));
  std::vector<Latent> finals;
  std::vector<double> f0, f1, p0, p1;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const auto r = latent_optimize(st, starts[i], target, iv.steps, iv.step_size);
    finals.push_back(r.latent);
    p0.push_back(r.trajectory.front());
    p1.push_back(r.trajectory.back());
  }
  const Batch out = decode(st, stack_rows(finals));
  std::size_t improved = 0;
  for (std::size_t i = 0; i < out.n; ++i) {
    f0.push_back(oracle_fitness(rec.seq(i)));
    f1.push_back(oracle_fitness(out.seq(i)));
    improved += f1.back() > f0.back();
  }
  const auto l = resolve_output(iv.out, "optimized.csv");
  write_pairs(l.primary, idx, rec, out,
              {{"fitness_before", f0}, {"fitness_after", f1}, {"predicted_before", p0}, {"predicted_after", p1}});
  RunManifest m = pair_manifest(iv, p);
  m.params = {{"split", iv.split},
              {"starts", std::to_string(in.n)},
              {"steps", std::to_string(iv.steps)},
              {"step_size", format_double(iv.step_size)},
              {"target", format_double(target)}};
  m.outputs["rows"] = l.primary.string();
  finish(m, l, t0);
  *iv.out_stream << "improved " << improved << "/" << out.n;
  if (out.n >= 2) *iv.out_stream << " diversity " << format_double(diversity(sequences_of(out)));
  *iv.out_stream << '\n';
  return kExitOk;
}

/// Fraction of continuous samples within 3 sigma of some mixture mean.
inline double mode_coverage(const Batch& b, const Dataset& ds) {
  const auto means = ds.means();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < b.n; ++i) {
    const auto r = b.row(i);
    for (const auto& mu : means)
      if (std::hypot(r[0] - mu[0], r[1] - mu[1]) <= 3.0 * ds.sigma) {
        ++hit;
        break;
      }
  }
  return static_cast<double>(hit) / static_cast<double>(b.n);
}

inline MetricReport evaluate(const Checkpoint& ck, const Dataset& ds, Split split, std::size_t n_gen, std::uint64_t seed,
                             std::size_t permutations) {
  const auto& st = ck.state;
  const auto sname = to_string(split);
  const Batch x = ds.batch(split);
  MetricReport rep = recon_metrics(st, ds, split);
  rep.add("lt_diagnostic", lt_diagnostic(ck.schedule, encode(st, x)), sname, x.n);
  Rng rng(seed);
  const Batch gen = generate_samples(ck, n_gen, rng);
  if (ds.kind == DataKind::Continuous) {
    const auto band = mmd_permutation_band(points_of(gen), points_of(x), permutations, rng);
    rep.add("gen_mmd2", band.statistic, sname, gen.n);
    rep.add("gen_mmd2_perm95", band.upper, sname, gen.n);
    rep.add("gen_mmd_bandwidth", band.bandwidth, sname, gen.n);
    rep.add("gen_within_3sigma", mode_coverage(gen, ds), "generated", gen.n);
  } else {
    const auto dn = diversity_novelty(sequences_of(gen), sequences_of(ds.batch(Split::Train)));
    rep.add("gen_diversity", dn.diversity, "generated", gen.n);
    rep.add("gen_novelty", dn.novelty, "train", gen.n);
  }
  const auto ps = probe_split(st, ds);
  bool both = false;
  for (auto y : ps.fit_y) both |= y != ps.fit_y.front();
  if (both) {
    const auto cls = fit_latent_classifier(ps.fit_x, ps.fit_y);
    std::vector<double> s;
    for (const auto& r : rows_of(encode(st, x))) s.push_back(classify(cls, r));
    rep.add("probe_auc", roc_auc(s, ds.labels_of(ds.indices(split))), sname, x.n);
  }
  if (st.arch.regressor) {
    const auto pred = regress(st, encode(st, x));
    const auto r = regression_metrics(x.targets, pred);
    rep.add("reg_mse", r.mse, sname, x.n);
    rep.add("reg_l1", r.l1, sname, x.n);
    rep.add("reg_pearson", r.pearson, sname, x.n);
    rep.add("reg_spearman", r.spearman, sname, x.n);
  }
  return rep;
}

inline int cmd_eval(const Invocation& iv) {
  const auto t0 = Clock::now();
  const auto p = load_pair(iv);
  const auto seed = iv.resolve_seed(stream_seed(p.ck.config.seed, SeedStream::Eval));
  const std::size_t n_gen = iv.n ? iv.n : (p.ds.kind == DataKind::Continuous ? 1000 : 200);
  const auto rep = evaluate(p.ck, p.ds, parse_split(iv.split), n_gen, seed, iv.permutations);
  write_report_csv(*iv.out_stream, rep);
  if (!iv.out.empty()) {
    const auto l = resolve_output(iv.out, "report.csv");
    save_report_csv(rep, l.primary);
    RunManifest m = pair_manifest(iv, p);
    m.seed = seed;
    m.params["n"] = std::to_string(n_gen);
    m.params["permutations"] = std::to_string(iv.permutations);
    m.outputs["report"] = l.primary.string();
    finish(m, l, t0);
  }
  return kExitOk;
}

inline int cmd_inspect(const Invocation& iv) {
  require_file(iv.ckpt_path, "ckpt");
  const auto info = inspect_checkpoint(iv.ckpt_path);
  const auto& c = info.config;
  auto& os = *iv.out_stream;
  if (iv.json) {
    nlohmann::json j;
    j["version"] = info.version;
    j["data_kind"] = to_string(c.data_kind);
    j["objective"] = to_string(c.objective);
    j["latent_dim"] = c.resolved_latent_dim();
    j["steps"] = info.steps;
    j["beta0"] = info.beta0;
    j["sigma_mode"] = to_string(info.sigma_mode);
    j["step"] = info.step;
    j["parameter_count"] = info.parameter_count;
    j["has_classifier"] = info.has_classifier;
    nlohmann::json t = nlohmann::json::array();
    for (const auto& [name, shape] : info.tensors) t.push_back({{"name", name}, {"shape", shape}});
    j["tensors"] = t;
    os << j.dump(2) << '\n';
    return kExitOk;
  }
  os << "version: " << info.version << '\n'
     << "data_kind: " << to_string(c.data_kind) << '\n'
     << "objective: " << to_string(c.objective) << '\n'
     << "latent_dim: " << c.resolved_latent_dim() << '\n'
     << "steps: " << info.steps << '\n'
     << "beta0: " << format_double(info.beta0) << '\n'
     << "sigma_mode: " << to_string(info.sigma_mode) << '\n'
     << "step: " << info.step << '\n'
     << "parameter_count: " << info.parameter_count << '\n'
     << "has_classifier: " << (info.has_classifier ? "true" : "false") << '\n';
  for (const auto& [name, shape] : info.tensors) os << "tensor: " << name << ' ' << shape_str(shape) << '\n';
  return kExitOk;
}

}  // namespace detail

/// Runs one command. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"EDDPM: encoder-decoder diffusion models at desk scale", "eddpm"};
  app.require_subcommand(1, 1);
  Invocation iv;
  iv.out_stream = &out;

  const auto add_out = [&](CLI::App* s, bool required = true) {
    auto* o = s->add_option("--out", iv.out, "output directory, or file path with the artifact's extension");
    if (required) o->required();
  };
  const auto add_pair = [&](CLI::App* s) {
    s->add_option("--ckpt", iv.ckpt_path, "checkpoint file")->required();
    s->add_option("--data", iv.data_path, "dataset file")->required();
    s->add_option("--split", iv.split, "train|valid|test")->capture_default_str();
  };

  auto* gen_data = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen_data->add_option("--kind", iv.kind, "continuous|sequence")->capture_default_str();
  gen_data->add_option("--n", iv.n, "number of samples (default 2000)");
  gen_data->add_option("--components", iv.components, "mixture components")->capture_default_str();
  gen_data->add_option("--seq_len,--seq-len", iv.seq_len, "sequence length")->capture_default_str();
  gen_data->add_option("--vocab", iv.vocab, "vocabulary size")->capture_default_str();
  gen_data->add_option("--seed", iv.seed, "seed (falls back to EDDPM_SEED, then 0)");
  add_out(gen_data);

  std::map<std::string, std::map<std::string, std::string>> cfg_values;
  std::vector<std::tuple<std::string, std::string, CLI::Option*>> cfg_opts;
  for (const std::string name : {"warmup", "train"}) {
    auto* s = app.add_subcommand(name, name == "warmup" ? "reconstruction-only phase" : "warmup then joint training");
    s->add_option("--config", iv.config_path, "config file (key = value lines)");
    s->add_option("--data", iv.data_path, "dataset file")->required();
    s->add_option("--init", iv.init_path, "continue from this checkpoint");
    add_out(s);
    auto& store = cfg_values[name];
    for (const auto& key : config_keys()) {
      std::string names = "--" + key;
      if (key.find('_') != std::string::npos) {
        std::string dashed = key;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        names += ",--" + dashed;
      }
      cfg_opts.emplace_back(name, key, s->add_option(names, store[key], "config key '" + key + "'"));
    }
  }

  auto* generate_cmd = app.add_subcommand("generate", "sample from the learned prior and decode");
  generate_cmd->add_option("--ckpt", iv.ckpt_path, "checkpoint file")->required();
  generate_cmd->add_option("--n", iv.n, "number of samples (default 1000)");
  generate_cmd->add_option("--sigma", iv.sigma, "fixed per-step noise scale");
  generate_cmd->add_option("--seed", iv.seed, "seed");
  add_out(generate_cmd);

  auto* reconstruct_cmd = app.add_subcommand("reconstruct", "decode(encode(x)) for one split");
  add_pair(reconstruct_cmd);
  reconstruct_cmd->add_option("--limit", iv.limit, "first N rows only");
  add_out(reconstruct_cmd);

  auto* interp = app.add_subcommand("interpolate", "decode points between two latents");
  add_pair(interp);
  interp->add_option("--a", iv.a, "first dataset row")->required();
  interp->add_option("--b", iv.b, "second dataset row")->required();
  interp->add_option("--alpha", iv.alpha, "slerp: 0 gives --a, 1 gives --b; lerp: alpha weights --a")->capture_default_str();
  interp->add_option("--points", iv.points, "evenly spaced alphas in [0, 1] instead of --alpha");
  interp->add_option("--mode", iv.mode, "slerp|lerp")->capture_default_str();
  add_out(interp);

  auto* edit = app.add_subcommand("edit", "latent arithmetic along the label direction");
  add_pair(edit);
  edit->add_option("--k", iv.k, "scale of the direction")->capture_default_str();
  edit->add_option("--sign", iv.sign, "+1 or -1")->capture_default_str();
  edit->add_option("--per_side,--per-side", iv.per_side, "training latents per label for the direction (0: all)")
      ->capture_default_str();
  edit->add_option("--limit", iv.limit, "first N rows only");
  add_out(edit);

  auto* manip = app.add_subcommand("manipulate", "move latents along a linear classifier");
  add_pair(manip);
  manip->add_option("--magnitude", iv.magnitude, "step along the unit classifier weight")->capture_default_str();
  manip->add_flag("--refit", iv.refit, "refit even if the checkpoint carries a classifier");
  manip->add_option("--limit", iv.limit, "first N rows only");
  add_out(manip);

  auto* opt = app.add_subcommand("optimize", "regressor-guided latent optimisation");
  add_pair(opt);
  opt->add_option("--starts", iv.starts, "number of start sequences")->capture_default_str();
  opt->add_option("--steps", iv.steps, "gradient steps")->capture_default_str();
  opt->add_option("--step_size,--step-size", iv.step_size, "gradient step size")->capture_default_str();
  opt->add_option("--target", iv.target, "target fitness (default: best training fitness + 1)");
  add_out(opt);

  auto* eval_cmd = app.add_subcommand("eval", "metric report for one split");
  add_pair(eval_cmd);
  eval_cmd->add_option("--n", iv.n, "generated samples (default 1000 continuous, 200 sequence)");
  eval_cmd->add_option("--permutations", iv.permutations, "MMD permutation count")->capture_default_str();
  eval_cmd->add_option("--seed", iv.seed, "seed");
  add_out(eval_cmd, false);

  auto* inspect = app.add_subcommand("inspect", "print a checkpoint header without loading tensors");
  inspect->add_option("--ckpt", iv.ckpt_path, "checkpoint file")->required();
  inspect->add_flag("--json", iv.json, "JSON output");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << '\n';
    err << "run 'eddpm --help' for usage\n";
    return kExitUsage;
  }

  for (auto* s : app.get_subcommands()) iv.command = s->get_name();
  for (const auto& [sub, key, o] : cfg_opts)
    if (sub == iv.command && o->count() > 0) iv.overrides[key] = cfg_values[sub][key];
  if (auto it = iv.overrides.find("seed"); it != iv.overrides.end()) {
    TrainingConfig tmp;
    set_config_value(tmp, "seed", it->second);
    iv.seed = tmp.seed;
  }

  try {
    if (iv.command == "gen-data") return detail::cmd_gen_data(iv);
    if (iv.command == "warmup") return detail::cmd_train(iv, true);
    if (iv.command == "train") return detail::cmd_train(iv, false);
    if (iv.command == "generate") return detail::cmd_generate(iv);
    if (iv.command == "reconstruct") return detail::cmd_reconstruct_or_edit(iv, false);
    if (iv.command == "edit") return detail::cmd_reconstruct_or_edit(iv, true);
    if (iv.command == "interpolate") return detail::cmd_interpolate(iv);
    if (iv.command == "manipulate") return detail::cmd_manipulate(iv);
    if (iv.command == "optimize") return detail::cmd_optimize(iv);
    if (iv.command == "eval") return detail::cmd_eval(iv);
    if (iv.command == "inspect") return detail::cmd_inspect(iv);
    throw UsageError("unknown command '" + iv.command + "'");
  } catch (const UsageError& e) {
    err << "error: usage: " << e.what() << '\n';
    return kExitUsage;
  } catch (const MissingFileError& e) {
    err << "error: missing-file: " << e.what() << '\n';
    return kExitMissingFile;
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return kExitError;
  }
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace eddpm::cli
