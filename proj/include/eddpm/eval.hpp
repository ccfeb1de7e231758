#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "batch.hpp"
#include "error.hpp"
#include "nets.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "synthdata.hpp"
#include "tasks.hpp"

namespace eddpm {

// ---------------------------------------------------------------------------
// Metric report

struct Metric {
  std::string name;
  double value = 0.0;
  std::string split;
  std::size_t n = 0;
};

struct MetricReport {
  std::vector<Metric> metrics;

  void add(std::string name, double value, std::string split, std::size_t n) {
    if (!std::isfinite(value)) throw NumericError("metric '" + name + "' is not finite");
    metrics.push_back({std::move(name), value, std::move(split), n});
  }

  std::optional<double> get(const std::string& name) const {
    for (const auto& m : metrics)
      if (m.name == name) return m.value;
    return std::nullopt;
  }
};

inline void write_report_csv(std::ostream& os, const MetricReport& r) {
  os << "metric,value,split,n\n";
  for (const auto& m : r.metrics) os << m.name << ',' << format_double(m.value) << ',' << m.split << ',' << m.n << '\n';
}

inline void save_report_csv(const MetricReport& r, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write report '" + path.string() + "'");
  write_report_csv(os, r);
}

// ---------------------------------------------------------------------------
// MMD

/// Rows of a continuous batch as points.
using Points = std::vector<std::vector<double>>;

inline Points points_of(const Batch& b) {
  if (b.kind != DataKind::Continuous) throw ShapeError("points_of: continuous batch expected");
  Points p;
  for (std::size_t i = 0; i < b.n; ++i) p.emplace_back(b.row(i).begin(), b.row(i).end());
  return p;
}

namespace detail {

inline double sqdist(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw RangeError("median of empty set");
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)));
}

inline void check_sets(const Points& x, const Points& y) {
  if (x.empty() || y.empty()) throw RangeError("mmd: empty sample set");
  const std::size_t d = x.front().size();
  for (const auto* s : {&x, &y})
    for (const auto& p : *s)
      if (p.size() != d) throw ShapeError("mmd: dimension mismatch");
}

}  // namespace detail

/// Median of pairwise distances over the pooled set (at most 1000 points, taken
/// in order, are used).
inline double median_bandwidth(const Points& x, const Points& y) {
  Points pool;
  for (const auto* s : {&x, &y})
    for (const auto& p : *s)
      if (pool.size() < 1000) pool.push_back(p);
  std::vector<double> d;
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) d.push_back(std::sqrt(detail::sqdist(pool[i], pool[j])));
  const double h = d.empty() ? 1.0 : detail::median_of(std::move(d));
  return h > 0 ? h : 1.0;
}

struct MmdOptions {
  std::optional<double> bandwidth;  // median heuristic when empty
  bool unbiased = true;
};

/// MMD^2 with k(a, b) = exp(-|a - b|^2 / (2 h^2)).
inline double mmd_rbf(const Points& x, const Points& y, const MmdOptions& opt = {}) {
  detail::check_sets(x, y);
  const double h = opt.bandwidth ? *opt.bandwidth : median_bandwidth(x, y);
  if (!(h > 0)) throw RangeError("mmd: bandwidth must be positive");
  const double g = 1.0 / (2.0 * h * h);
  const auto k = [g](const auto& a, const auto& b) { return std::exp(-g * detail::sqdist(a, b)); };
  const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
  if (opt.unbiased && (x.size() < 2 || y.size() < 2)) throw RangeError("mmd: unbiased estimate needs >= 2 points per set");
  double kxx = 0, kyy = 0, kxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) kxx += 2 * k(x[i], x[j]);
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = i + 1; j < y.size(); ++j) kyy += 2 * k(y[i], y[j]);
  for (const auto& a : x)
    for (const auto& b : y) kxy += k(a, b);
  if (opt.unbiased) return kxx / (m * (m - 1)) + kyy / (n * (n - 1)) - 2 * kxy / (m * n);
  return (kxx + m) / (m * m) + (kyy + n) / (n * n) - 2 * kxy / (m * n);
}

struct PermutationBand {
  double statistic = 0.0;
  double upper = 0.0;  // (1 - alpha) quantile of the permutation distribution
  double bandwidth = 0.0;
  bool within() const { return statistic <= upper; }
};

/// Permutation test for MMD^2 at a fixed (median-heuristic) bandwidth.
inline PermutationBand mmd_permutation_band(const Points& x, const Points& y, std::size_t permutations, Rng& rng,
                                            double alpha = 0.05) {
  detail::check_sets(x, y);
  PermutationBand out;
  out.bandwidth = median_bandwidth(x, y);
  const MmdOptions opt{out.bandwidth, true};
  out.statistic = mmd_rbf(x, y, opt);
  Points pool = x;
  pool.insert(pool.end(), y.begin(), y.end());
  std::vector<double> stats;
  for (std::size_t p = 0; p < permutations; ++p) {
    rng.shuffle(pool);
    const Points a(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(x.size()));
    const Points b(pool.begin() + static_cast<std::ptrdiff_t>(x.size()), pool.end());
    stats.push_back(mmd_rbf(a, b, opt));
  }
  std::sort(stats.begin(), stats.end());
  const auto idx = std::min(stats.size() - 1, static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(stats.size()))) - 1);
  out.upper = stats.empty() ? 0.0 : stats[idx];
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction

struct ReconStats {
  std::size_t n = 0;
  double mse = 0.0;  // continuous: mean over samples of summed squared error
  double ce = 0.0;   // sequence: mean per-position cross-entropy, nats
  double token_accuracy = 0.0;
};

/// Continuous decoder means [n, d] against the batch.
inline ReconStats continuous_recon_stats(const Tensor& decoded, const Batch& x0) {
  if (x0.kind != DataKind::Continuous || decoded.size() != x0.values.size() || x0.n == 0)
    throw ShapeError("recon_metrics: decoded output does not match the batch");
  ReconStats r;
  r.n = x0.n;
  double s = 0;
  for (std::size_t k = 0; k < decoded.size(); ++k) s += (decoded.data[k] - x0.values[k]) * (decoded.data[k] - x0.values[k]);
  r.mse = s / static_cast<double>(x0.n);
  return r;
}

/// Sequence logits [n * L, V] against the batch tokens.
inline ReconStats sequence_recon_stats(const Tensor& logits, const Batch& x0) {
  if (x0.kind != DataKind::Sequence || x0.n == 0 || logits.rows() != x0.tokens.size())
    throw ShapeError("recon_metrics: logits do not match the batch");
  ReconStats r;
  r.n = x0.n;
  const std::size_t v = logits.cols(), rows = logits.rows();
  double ce = 0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = logits.data.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0;
    for (std::size_t c = 0; c < v; ++c) z += std::exp(row[c] - mx);
    const auto tok = static_cast<std::size_t>(x0.tokens[i]);
    if (tok >= v) throw RangeError("recon_metrics: token outside vocabulary");
    ce += -(row[tok] - mx - std::log(z));
    hit += static_cast<std::size_t>(std::max_element(row, row + v) - row) == tok;
  }
  r.ce = ce / static_cast<double>(rows);
  r.token_accuracy = static_cast<double>(hit) / static_cast<double>(rows);
  return r;
}

/// Continuous: squared error of decode(encode-mean). Sequence: per-position CE of
/// the decoder logits and exact-token accuracy of their argmax.
inline ReconStats recon_stats(const ModelState& st, const Batch& x0) {
  if (x0.n == 0) throw RangeError("recon_metrics: empty split");
  const Tensor raw = decode_raw(st, encode(st, x0));
  return x0.kind == DataKind::Continuous ? continuous_recon_stats(raw, x0) : sequence_recon_stats(raw, x0);
}

inline MetricReport recon_metrics(const ModelState& st, const Dataset& data, Split split) {
  const auto b = data.batch(split);
  const auto r = recon_stats(st, b);
  MetricReport rep;
  if (b.kind == DataKind::Continuous) {
    rep.add("recon_mse", r.mse, to_string(split), r.n);
  } else {
    rep.add("recon_ce", r.ce, to_string(split), r.n);
    rep.add("recon_token_accuracy", r.token_accuracy, to_string(split), r.n);
  }
  return rep;
}

/// Fraction of positions where the two sequences agree.
inline double token_overlap(std::span<const std::int32_t> a, std::span<const std::int32_t> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("token_overlap: length mismatch");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Sequence diversity and novelty

inline std::size_t levenshtein(std::span<const std::int32_t> a, std::span<const std::int32_t> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

using Sequences = std::vector<std::vector<std::int32_t>>;

inline Sequences sequences_of(const Batch& b) {
  if (b.kind != DataKind::Sequence) throw ShapeError("sequences_of: sequence batch expected");
  Sequences out;
  for (std::size_t i = 0; i < b.n; ++i) out.emplace_back(b.seq(i).begin(), b.seq(i).end());
  return out;
}

/// Mean over items of the mean distance to the other items.
inline double diversity(const Sequences& seqs) {
  if (seqs.size() < 2) throw RangeError("diversity: need >= 2 sequences");
  const std::size_t n = seqs.size();
  std::vector<double> total(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = static_cast<double>(levenshtein(seqs[i], seqs[j]));
      total[i] += d;
      total[j] += d;
    }
  double s = 0;
  for (double t : total) s += t / static_cast<double>(n - 1);
  return s / static_cast<double>(n);
}

/// Median over items of the minimum distance to the reference set.
inline double novelty(const Sequences& seqs, const Sequences& reference) {
  if (reference.empty()) throw RangeError("novelty: empty training set");
  if (seqs.empty()) throw RangeError("novelty: no sequences");
  std::vector<double> mins;
  for (const auto& s : seqs) {
    std::size_t best = SIZE_MAX;
    for (const auto& r : reference) {
      best = std::min(best, levenshtein(s, r));
      if (best == 0) break;
    }
    mins.push_back(static_cast<double>(best));
  }
  return detail::median_of(std::move(mins));
}

struct DiversityNovelty {
  double diversity;
  double novelty;
};

inline DiversityNovelty diversity_novelty(const Sequences& seqs, const Sequences& train_set) {
  return {diversity(seqs), novelty(seqs, train_set)};
}

// ---------------------------------------------------------------------------
// Regression quality

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("pearson: need equal lengths >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw RangeError("correlation of a constant vector is undefined");
  return sxy / std::sqrt(sxx * syy);
}

/// 1-based ranks, ties receive their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("spearman: need equal lengths >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

struct RegressionMetrics {
  double mse, l1, pearson, spearman;
};

inline RegressionMetrics regression_metrics(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.size() != y_pred.size() || y_true.size() < 2)
    throw ShapeError("regression_metrics: need equal lengths >= 2");
  double mse = 0, l1 = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double e = y_pred[i] - y_true[i];
    mse += e * e;
    l1 += std::abs(e);
  }
  const double n = static_cast<double>(y_true.size());
  return {mse / n, l1 / n, pearson(y_true, y_pred), spearman(y_true, y_pred)};
}

// ---------------------------------------------------------------------------
// Attribute transfer and probes

/// Geometric mean of attribute flip rate and content score.
inline double transfer_accuracy(double attr_flip_rate, double content_score) {
  for (double v : {attr_flip_rate, content_score})
    if (!(v >= 0.0 && v <= 1.0)) throw RangeError("transfer_accuracy: inputs must lie in [0, 1]");
  return std::sqrt(attr_flip_rate * content_score);
}

/// Area under the ROC curve of `scores` for binary `labels` (ties count half).
inline double roc_auc(std::span<const double> scores, std::span<const std::int32_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: length mismatch");
  const auto r = average_ranks(scores);
  double pos_rank = 0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) {
      pos_rank += r[i];
      ++npos;
    }
  const std::size_t nneg = labels.size() - npos;
  if (npos == 0 || nneg == 0) throw RangeError("roc_auc: need both classes");
  const double np = static_cast<double>(npos), nn = static_cast<double>(nneg);
  return (pos_rank - np * (np + 1) / 2) / (np * nn);
}

/// Logistic probe fitted on train latents, AUC on test latents.
inline double linear_probe_auc(const std::vector<Latent>& train_x, const std::vector<std::int32_t>& train_y,
                               const std::vector<Latent>& test_x, const std::vector<std::int32_t>& test_y) {
  const auto cls = fit_latent_classifier(train_x, train_y);
  std::vector<double> scores;
  for (const auto& x : test_x) scores.push_back(classify(cls, x));
  return roc_auc(scores, test_y);
}

// ---------------------------------------------------------------------------
// Prior-matching diagnostic

/// KL(q(z_S | z_0) || N(0, I)) per latent dimension in nats, averaged over rows
/// of `z0`. q(z_S | z_0) = N(sqrt(abar_S) z0, (1 - abar_S) I).
inline double lt_diagnostic(const NoiseSchedule& sched, const Tensor& z0) {
  if (z0.rank() != 2) throw ShapeError("lt_diagnostic: latents must be [n, d]");
  const double ab = sched.alpha_bar(sched.steps());
  const double var = 1.0 - ab;
  const double per_dim_const = 0.5 * (var - 1.0 - std::log(var));
  double mean_sq = 0;
  for (double v : z0.data) mean_sq += v * v;
  mean_sq /= static_cast<double>(z0.size());
  return per_dim_const + 0.5 * ab * mean_sq;
}

}  // namespace eddpm
