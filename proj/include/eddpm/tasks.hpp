#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "batch.hpp"
#include "error.hpp"
#include "nets.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace eddpm {

using Latent = std::vector<double>;

// ---------------------------------------------------------------------------
// Generation

struct GenerateOptions {
  /// Replaces sigma_s at every ancestral step (0 gives a deterministic map of z_S).
  std::optional<double> sigma;
  /// Called with (s, z_s) for s = S..1 and then (0, z_0).
  std::function<void(std::size_t, const Tensor&)> trace;
};

/// Ancestral sampling in latent space. z_S ~ N(0, I); for s = S..2 the posterior
/// mean with predict_clean plugged in, plus sigma_s noise; z_0 = predict_clean(z_1, 1).
inline Tensor sample_latents(const ModelState& st, const NoiseSchedule& sched, std::size_t n, Rng& rng,
                             const GenerateOptions& opts = {}) {
  if (n == 0) throw RangeError("generate: n must be positive");
  const std::size_t d = st.arch.latent_dim;
  Tensor z({n, d}, rng.normals(n * d));
  for (std::size_t s = sched.steps(); s >= 2; --s) {
    if (opts.trace) opts.trace(s, z);
    const Tensor clean = predict_clean(st, sched, z, s);
    const auto pc = posterior_coeffs(sched, s);
    const double sd = opts.sigma ? *opts.sigma : std::sqrt(sched.sigma2(s));
    if (sd < 0 || !std::isfinite(sd)) throw RangeError("generate: sigma must be finite and >= 0");
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double noise = sd > 0 ? sd * rng.normal() : 0.0;
      z.data[k] = pc.clean * clean.data[k] + pc.noisy * z.data[k] + noise;
    }
  }
  if (opts.trace) opts.trace(1, z);
  z = predict_clean(st, sched, z, 1);
  if (opts.trace) opts.trace(0, z);
  return z;
}

inline Batch generate(const ModelState& st, const NoiseSchedule& sched, std::size_t n, Rng& rng,
                      const GenerateOptions& opts = {}) {
  return decode(st, sample_latents(st, sched, n, rng, opts));
}

/// Standard-normal prior of the vanilla VAE baseline: z ~ N(0, I), decoded.
inline Batch generate_standard_prior(const ModelState& st, std::size_t n, Rng& rng) {
  if (n == 0) throw RangeError("generate: n must be positive");
  const std::size_t d = st.arch.latent_dim;
  return decode(st, Tensor({n, d}, rng.normals(n * d)));
}

// ---------------------------------------------------------------------------
// Reconstruction and latent access

/// decode(encode-mean(x0)).
inline Batch reconstruct(const ModelState& st, const Batch& x0) { return decode(st, encode(st, x0)); }

inline std::vector<Latent> rows_of(const Tensor& t) {
  std::vector<Latent> out;
  for (std::size_t i = 0; i < t.rows(); ++i)
    out.emplace_back(t.data.begin() + static_cast<std::ptrdiff_t>(i * t.cols()),
                     t.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * t.cols()));
  return out;
}

inline Tensor stack_rows(const std::vector<Latent>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  std::vector<double> data;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw ShapeError("stack_rows: ragged latents");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows.front().size()}, std::move(data));
}

// ---------------------------------------------------------------------------
// Interpolation

enum class InterpMode { Slerp, Lerp };

inline InterpMode parse_interp_mode(const std::string& s) {
  if (s == "slerp") return InterpMode::Slerp;
  if (s == "lerp") return InterpMode::Lerp;
  throw ConfigError("interpolation mode must be slerp|lerp, got '" + s + "'");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// slerp(a, b; 0) = a, slerp(a, b; 1) = b.
/// lerp(a, b; alpha) = alpha * a + (1 - alpha) * b, so alpha = 1 gives a.
inline Latent interpolate(const Latent& a, const Latent& b, double alpha, InterpMode mode) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("interpolate: latent dimension mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw RangeError("interpolate: alpha must lie in [0, 1]");
  Latent out(a.size());
  if (mode == InterpMode::Lerp) {
    if (alpha == 1.0) return a;
    if (alpha == 0.0) return b;
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = alpha * a[i] + (1.0 - alpha) * b[i];
    return out;
  }
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw RangeError("slerp: zero vector");
  const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  const double omega = std::acos(c);
  if (std::numbers::pi - omega < 1e-6) throw RangeError("slerp: antipodal endpoints");
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;
  if (omega < 1e-12) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - alpha) * a[i] + alpha * b[i];
    return out;
  }
  const double so = std::sin(omega);
  const double wa = std::sin((1.0 - alpha) * omega) / so;
  const double wb = std::sin(alpha * omega) / so;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = wa * a[i] + wb * b[i];
  return out;
}

// ---------------------------------------------------------------------------
// Latent arithmetic

/// mean(pos) - mean(neg).
inline Latent attribute_direction(const std::vector<Latent>& pos, const std::vector<Latent>& neg) {
  if (pos.empty() || neg.empty()) throw RangeError("attribute_direction: empty latent set");
  const std::size_t d = pos.front().size();
  Latent v(d, 0.0);
  for (const auto& p : pos) {
    if (p.size() != d) throw ShapeError("attribute_direction: latent dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) v[i] += p[i] / static_cast<double>(pos.size());
  }
  for (const auto& q : neg) {
    if (q.size() != d) throw ShapeError("attribute_direction: latent dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) v[i] -= q[i] / static_cast<double>(neg.size());
  }
  return v;
}

struct EditSpec {
  Latent direction;
  double k = 1.0;
  int sign = 1;

  void validate() const {
    for (double x : direction)
      if (!std::isfinite(x)) throw RangeError("edit: direction must be finite");
    if (!(k >= 0.0) || !std::isfinite(k)) throw RangeError("edit: k must be finite and >= 0");
    if (sign != 1 && sign != -1) throw RangeError("edit: sign must be +1 or -1");
  }
};

/// x1 + sign * k * v for every row.
inline Tensor edit_latents(const Tensor& x1, const EditSpec& spec) {
  spec.validate();
  if (spec.direction.size() != x1.cols()) throw ShapeError("edit: direction dimension does not match latents");
  Tensor out = x1;
  const double c = spec.sign * spec.k;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.data[i * out.cols() + j] += c * spec.direction[j];
  return out;
}

inline Batch arithmetic_edit(const ModelState& st, const Batch& x0, const EditSpec& spec) {
  return decode(st, edit_latents(encode(st, x0), spec));
}

// ---------------------------------------------------------------------------
// Classifier manipulation

struct ClassifierFitOptions {
  std::size_t iterations = 2000;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

/// Logistic regression on latents by full-batch gradient descent (features
/// standardised internally). The result has unit-norm w; `scale` converts the
/// score w.x1 + bias back into the fitted logit.
inline LinearClassifier fit_latent_classifier(const std::vector<Latent>& x, const std::vector<std::int32_t>& y,
                                              const ClassifierFitOptions& opt = {}) {
  if (x.size() != y.size() || x.empty()) throw ShapeError("fit_latent_classifier: latents and labels differ in count");
  std::size_t pos = 0;
  for (auto v : y) {
    if (v != 0 && v != 1) throw RangeError("fit_latent_classifier: labels must be 0/1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos < 2 || y.size() - pos < 2) throw RangeError("fit_latent_classifier: need >= 2 examples per class");
  const std::size_t d = x.front().size();
  const double n = static_cast<double>(x.size());
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (const auto& r : x) {
    if (r.size() != d) throw ShapeError("fit_latent_classifier: ragged latents");
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j] / n;
  }
  for (const auto& r : x)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (r[j] - mu[j]) * (r[j] - mu[j]) / n;
  for (auto& s : sd) s = s > 0 ? std::sqrt(s) : 1.0;

  std::vector<double> w(d, 0.0), grad(d);
  double b = 0.0;
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * (x[i][j] - mu[j]) / sd[j];
      const double r = detail::sigmoid(z) - static_cast<double>(y[i]);
      for (std::size_t j = 0; j < d; ++j) grad[j] += r * (x[i][j] - mu[j]) / sd[j] / n;
      gb += r / n;
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= opt.learning_rate * (grad[j] + opt.l2 * w[j]);
    b -= opt.learning_rate * gb;
  }
  // Back to raw latent coordinates: logit = sum_j (w_j / sd_j) x_j + b - sum_j w_j mu_j / sd_j.
  LinearClassifier cls;
  cls.w.resize(d);
  double bias = b;
  for (std::size_t j = 0; j < d; ++j) {
    cls.w[j] = w[j] / sd[j];
    bias -= w[j] * mu[j] / sd[j];
  }
  const double nw = norm(cls.w);
  if (nw == 0.0) throw NumericError("fit_latent_classifier: degenerate (zero) weight vector");
  for (auto& v : cls.w) v /= nw;
  cls.bias = bias / nw;
  cls.scale = nw;
  return cls;
}

struct ManipulationSpec {
  LinearClassifier classifier;
  double magnitude = 0.1;

  void validate() const {
    if (std::abs(norm(classifier.w) - 1.0) > 1e-9) throw RangeError("manipulate: classifier weight must be unit norm");
    if (!std::isfinite(magnitude)) throw RangeError("manipulate: magnitude must be finite");
  }
};

/// x1 + magnitude * w for every row.
inline Tensor manipulate_latents(const Tensor& x1, const ManipulationSpec& spec) {
  spec.validate();
  return edit_latents(x1, EditSpec{spec.classifier.w, std::abs(spec.magnitude), spec.magnitude < 0 ? -1 : 1});
}

inline Batch manipulate(const ModelState& st, const Batch& x0, const ManipulationSpec& spec) {
  return decode(st, manipulate_latents(encode(st, x0), spec));
}

// ---------------------------------------------------------------------------
// Regressor-guided optimisation

struct OptimizeResult {
  Latent latent;
  std::vector<double> trajectory;  // predicted fitness before each update and after the last
  Batch decoded;
};

/// Gradient descent on (regress(x1) - target)^2 in latent space.
inline OptimizeResult latent_optimize(const ModelState& st, const Latent& start, double target, std::size_t steps,
                                      double step_size) {
  if (!st.arch.regressor) throw StateError("latent_optimize: model has no regressor head");
  if (start.size() != st.arch.latent_dim) throw ShapeError("latent_optimize: start latent has wrong dimension");
  if (!(step_size > 0)) throw RangeError("latent_optimize: step_size must be positive");
  OptimizeResult res;
  Tensor z({1, start.size()}, start, true);
  for (std::size_t it = 0;; ++it) {
    z.zero_grad();
    Tape tape;
    Graph g(tape, st);
    Var pred = regressor(g, tape.leaf(z));
    res.trajectory.push_back(pred.item());
    if (it == steps) break;
    Var loss = square(pred - tape.constant({1, 1}, {target}));
    tape.backward(sum(loss));
    for (std::size_t k = 0; k < z.size(); ++k) z.data[k] -= step_size * z.grad[k];
  }
  res.latent = z.data;
  res.decoded = decode(st, Tensor({1, start.size()}, z.data));
  return res;
}

}  // namespace eddpm
