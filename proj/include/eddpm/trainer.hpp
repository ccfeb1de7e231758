#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "batch.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "error.hpp"
#include "nets.hpp"
#include "objective.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "synthdata.hpp"

namespace eddpm {

enum class Phase { Warmup, Main };

inline const char* to_string(Phase p) { return p == Phase::Warmup ? "warmup" : "main"; }

struct MetricRow {
  std::uint64_t step = 0;  // 1-based global step
  Phase phase = Phase::Main;
  LossBreakdown parts;
};

/// Seeds derived from the run seed; each consumer owns one stream.
enum class SeedStream : std::uint64_t { Init = 1, Noise = 2, Shuffle = 3, Eval = 4 };

inline std::uint64_t stream_seed(std::uint64_t seed, SeedStream s) {
  return mix_seed(seed, static_cast<std::uint64_t>(s));
}

/// Adam update of every parameter the last graph recorded, then clears grads.
inline void apply_updates(ModelState& st, const Graph& g, double lr) {
  for (std::size_t i = 0; i < st.params.size(); ++i) {
    auto& t = st.params[i].tensor;
    if (g.touched(i) && !t.grad.empty()) adam_update(st.optimizer, i, t, lr);
  }
  st.zero_grad();
}

/// One reconstruction-only update of encoder and decoder. Returns L_rec.
inline double warmup_step(ModelState& st, const Batch& batch, double lr) {
  st.zero_grad();
  Tape tape;
  Graph g(tape, st);
  Var loss = loss_rec(g, batch, encoder(g, batch).mean);
  const double value = loss.item();
  tape.backward(loss);
  apply_updates(st, g, lr);
  return value;
}

/// One step of the joint objective (or the VAE baseline), one backward pass
/// and one Adam update over every parameter that received a gradient.
///
/// For the VAE objective the KL term is reported in `align_term`.
inline LossBreakdown train_step(ModelState& st, const NoiseSchedule& sched, const Batch& batch, Rng& rng,
                                const TrainingConfig& cfg) {
  st.zero_grad();
  Tape tape;
  Graph g(tape, st);
  LossBreakdown parts;
  Var total;
  if (cfg.objective == Objective::Vae) {
    Tensor eps({batch.n, st.arch.latent_dim}, rng.normals(batch.n * st.arch.latent_dim));
    auto enc = encoder(g, batch);
    Var x1 = enc.mean + exp(scale(*enc.logvar, 0.5)) * tape.constant(eps);
    Var rec = loss_rec(g, batch, x1);
    Var kl = gaussian_kl_to_standard(enc.mean, *enc.logvar);
    total = rec + kl;
    parts.rec_term = rec.item();
    parts.align_term = kl.item();
    parts.total = parts.final_total = total.item();
    parts.chain_length = 1;
  } else {
    const auto draw = draw_step(sched, batch.n, st.arch.latent_dim, rng, cfg.per_example_s);
    auto fs = build_final_step(g, sched, batch, draw, cfg.w, cfg.gamma_mode, cfg.w_protein);
    total = fs.total;
    parts = fs.parts;
  }
  if (!std::isfinite(parts.total)) throw NumericError("train_step: non-finite loss");
  tape.backward(total);
  apply_updates(st, g, cfg.learning_rate);
  return parts;
}

struct TrainOptions {
  /// Written every `checkpoint_every` steps (config value when 0) and at the end.
  std::optional<std::filesystem::path> checkpoint_path;
  std::size_t checkpoint_every = 0;
  /// Stop once the global step counter reaches this value.
  std::optional<std::uint64_t> max_steps;
  std::function<void(const MetricRow&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricRow> metrics;
  bool finished = false;  // false when stopped early by max_steps
};

inline std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch_size) {
  return (n_train + batch_size - 1) / batch_size;
}

/// Fresh checkpoint at step 0.
inline Checkpoint initial_checkpoint(const TrainingConfig& cfg) {
  cfg.validate();
  Checkpoint ck;
  ck.config = cfg;
  ck.schedule = cfg.schedule();
  ck.state = init_params(cfg.arch(), stream_seed(cfg.seed, SeedStream::Init));
  ck.rng_state = Rng(stream_seed(cfg.seed, SeedStream::Noise)).state();
  return ck;
}

namespace detail {

/// Order of training indices for one epoch; a pure function of (seed, phase, epoch)
/// so a resumed run sees the same batches.
inline std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train_idx, std::uint64_t seed, Phase phase,
                                            std::uint64_t epoch) {
  auto order = train_idx;
  Rng rng(mix_seed(stream_seed(seed, SeedStream::Shuffle), (epoch << 1) | (phase == Phase::Main ? 1 : 0)));
  rng.shuffle(order);
  return order;
}

}  // namespace detail

/// Warmup (reconstruction only) then the main phase, continuing from `ck.step`.
/// Global step k (0-based) maps to a (phase, epoch, batch) triple, which is what
/// makes resume exact.
inline TrainResult train(Checkpoint ck, const Dataset& data, const TrainOptions& opts = {}) {
  const TrainingConfig& cfg = ck.config;
  cfg.validate();
  if (data.samples.kind != cfg.data_kind)
    throw ConfigError(std::string("train: dataset is ") + to_string(data.samples.kind) + ", config says " +
                      to_string(cfg.data_kind));
  check_compatible(ck.state, cfg.arch());
  const auto train_idx = data.indices(Split::Train);
  if (train_idx.empty()) throw ConfigError("train: dataset has no training samples");
  const std::size_t spe = steps_per_epoch(train_idx.size(), cfg.batch_size);
  const std::uint64_t warm_steps = cfg.epochs_warmup * spe;
  const std::uint64_t total_steps = warm_steps + cfg.epochs_main * spe;
  const std::size_t every = opts.checkpoint_every ? opts.checkpoint_every : cfg.checkpoint_every;

  Rng rng;
  rng.set_state(ck.rng_state);
  TrainResult result;
  std::vector<std::size_t> order;
  std::optional<std::pair<Phase, std::uint64_t>> order_key;

  while (ck.step < total_steps) {
    if (opts.max_steps && ck.step >= *opts.max_steps) break;
    const Phase phase = ck.step < warm_steps ? Phase::Warmup : Phase::Main;
    const std::uint64_t local = phase == Phase::Warmup ? ck.step : ck.step - warm_steps;
    const std::uint64_t epoch = local / spe;
    const std::size_t b = local % spe;
    if (!order_key || *order_key != std::pair{phase, epoch}) {
      order = detail::epoch_order(train_idx, cfg.seed, phase, epoch);
      order_key = {phase, epoch};
    }
    const std::size_t lo = b * cfg.batch_size;
    const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
    const Batch batch = data.samples.select(std::span(order).subspan(lo, hi - lo));

    MetricRow row;
    row.step = ck.step + 1;
    row.phase = phase;
    try {
      if (phase == Phase::Warmup) {
        row.parts.rec_term = row.parts.total = row.parts.final_total = warmup_step(ck.state, batch, cfg.learning_rate);
        row.parts.chain_length = 1;
      } else {
        row.parts = train_step(ck.state, ck.schedule, batch, rng, cfg);
      }
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(row.step) + " (" + to_string(phase) +
                         "): " + e.what());
    }
    ++ck.step;
    ck.rng_state = rng.state();
    if (opts.on_step) opts.on_step(row);
    result.metrics.push_back(row);
    if (opts.checkpoint_path && every && ck.step % every == 0) save_checkpoint(ck, *opts.checkpoint_path);
  }
  result.finished = ck.step >= total_steps;
  ck.rng_state = rng.state();
  if (opts.checkpoint_path) save_checkpoint(ck, *opts.checkpoint_path);
  result.checkpoint = std::move(ck);
  return result;
}

inline TrainResult train(const TrainingConfig& cfg, const Dataset& data, const TrainOptions& opts = {}) {
  return train(initial_checkpoint(cfg), data, opts);
}

/// Reconstruction-only phase: `epochs_warmup` epochs, no diffusion.
inline ModelState warmup(const TrainingConfig& cfg, const Dataset& data) {
  TrainingConfig c = cfg;
  c.epochs_main = 0;
  return train(c, data).checkpoint.state;
}

inline constexpr std::string_view kMetricsHeader = "step,total,eps,align,rec,reg,s";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows, bool header = true) {
  if (header) os << kMetricsHeader << '\n';
  for (const auto& r : rows)
    os << r.step << ',' << format_double(r.parts.total) << ',' << format_double(r.parts.eps_term) << ','
       << format_double(r.parts.align_term) << ',' << format_double(r.parts.rec_term) << ','
       << format_double(r.parts.regressor_term) << ',' << r.parts.s << '\n';
}

inline void save_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path,
                             bool append = false) {
  const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw IoError("cannot write metrics '" + path.string() + "'");
  write_metrics_csv(os, rows, header);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

/// Centered moving average with window `win` (shrinks at the edges).
inline std::vector<double> smooth(const std::vector<double>& v, std::size_t win) {
  std::vector<double> out(v.size());
  const std::size_t h = win / 2;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t lo = i >= h ? i - h : 0;
    const std::size_t hi = std::min(v.size(), i + h + 1);
    double s = 0;
    for (std::size_t j = lo; j < hi; ++j) s += v[j];
    out[i] = s / static_cast<double>(hi - lo);
  }
  return out;
}

}  // namespace eddpm
