#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "eddpm/eddpm.hpp"

namespace eddpm::fixtures {

/// Seeded generator of random inputs for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t size(std::size_t lo, std::size_t hi) { return lo + rng_.below(hi - lo + 1); }
  double real(double lo, double hi) { return lo + (hi - lo) * rng_.uniform(); }
  double normal() { return rng_.normal(); }
  std::vector<double> normals(std::size_t n, double sd = 1.0) {
    auto v = rng_.normals(n);
    for (auto& x : v) x *= sd;
    return v;
  }
  Tensor tensor(Shape s, double sd = 1.0) {
    const auto n = numel(s);
    return Tensor(std::move(s), normals(n, sd));
  }
  std::vector<std::int32_t> tokens(std::size_t n, std::size_t vocab) {
    std::vector<std::int32_t> t(n);
    for (auto& x : t) x = static_cast<std::int32_t>(rng_.below(vocab));
    return t;
  }
  Batch continuous_batch(std::size_t n, std::size_t d, double sd = 1.0) { return Batch::continuous(n, d, normals(n * d, sd)); }
  Batch sequence_batch(std::size_t n, std::size_t len, std::size_t vocab) {
    return Batch::sequences(n, len, tokens(n * len, vocab));
  }
  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

/// finite_diff_check over the coordinates whose analytic gradient exceeds 1e-9;
/// the remaining coordinates must have a central difference below 1e-7 in
/// magnitude (otherwise 1 is returned).
inline double gradient_error(const ValueAndGrad& f, std::span<const double> point, double step = 1e-6) {
  std::vector<double> g;
  f(point, &g);
  std::vector<std::size_t> keep;
  std::vector<double> x(point.begin(), point.end());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::abs(g[i]) > 1e-9) {
      keep.push_back(i);
      continue;
    }
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x, nullptr);
    x[i] = orig - step;
    const double down = f(x, nullptr);
    x[i] = orig;
    if (std::abs((up - down) / (2 * step)) > 1e-7) return 1.0;
  }
  if (keep.empty()) return 0.0;
  ValueAndGrad sub = [&](std::span<const double> y, std::vector<double>* grad) {
    std::vector<double> full(point.begin(), point.end());
    for (std::size_t k = 0; k < keep.size(); ++k) full[keep[k]] = y[k];
    std::vector<double> fg;
    const double v = f(full, grad ? &fg : nullptr);
    if (grad) {
      grad->resize(keep.size());
      for (std::size_t k = 0; k < keep.size(); ++k) (*grad)[k] = fg[keep[k]];
    }
    return v;
  };
  std::vector<double> y;
  for (auto i : keep) y.push_back(point[i]);
  return finite_diff_check(sub, y, step);
}

/// Small architecture for gradient checks and quick training.
inline ArchConfig tiny_arch(DataKind kind, std::size_t latent = 3, std::size_t hidden = 5) {
  ArchConfig a;
  a.kind = kind;
  a.data_dim = 2;
  a.seq_len = 3;
  a.vocab = 4;
  a.latent_dim = latent;
  a.hidden = hidden;
  a.eps_hidden = hidden;
  a.eps_blocks = 1;
  a.time_dim = 4;
  a.regressor_hidden = 3;
  return a;
}

/// Random small architecture drawn from `g`.
inline ArchConfig random_arch(Gen& g, DataKind kind) {
  ArchConfig a = tiny_arch(kind, g.size(1, 4), g.size(2, 6));
  a.data_dim = g.size(1, 3);
  a.seq_len = g.size(2, 4);
  a.vocab = g.size(2, 5);
  a.eps_hidden = g.size(2, 6);
  a.eps_blocks = g.size(0, 2);
  a.time_dim = 2 * g.size(1, 3);
  return a;
}

inline Batch random_batch(Gen& g, const ArchConfig& a, std::size_t n) {
  return a.kind == DataKind::Continuous ? g.continuous_batch(n, a.data_dim) : g.sequence_batch(n, a.seq_len, a.vocab);
}

/// Small continuous run config used across trainer and CLI tests.
inline TrainingConfig small_config(DataKind kind = DataKind::Continuous) {
  TrainingConfig c;
  c.data_kind = kind;
  c.seq_len = 6;
  c.vocab = 5;
  c.latent_dim = kind == DataKind::Continuous ? 2 : 4;
  c.hidden = 8;
  c.eps_hidden = 8;
  c.eps_blocks = 1;
  c.time_dim = 4;
  c.regressor_hidden = 4;
  c.steps = 10;
  c.learning_rate = 1e-2;
  c.batch_size = 16;
  c.epochs_warmup = 2;
  c.epochs_main = 3;
  c.seed = 11;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("eddpm_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
             std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace eddpm::fixtures
