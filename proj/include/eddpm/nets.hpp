#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "batch.hpp"
#include "error.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace eddpm {

/// Architecture of all learnable components.
struct ArchConfig {
  DataKind kind = DataKind::Continuous;
  std::size_t data_dim = 2;  // continuous samples
  std::size_t seq_len = 20;  // sequences
  std::size_t vocab = 20;    // sequences
  std::size_t latent_dim = 4;
  std::size_t hidden = 64;
  std::size_t eps_hidden = 64;
  std::size_t eps_blocks = 2;
  std::size_t time_dim = 16;
  bool regressor = false;
  std::size_t regressor_hidden = 32;
  bool logvar_head = false;  // diagonal-Gaussian encoder for the VAE baseline

  std::size_t input_width() const { return kind == DataKind::Continuous ? data_dim : seq_len * vocab; }
  std::size_t sample_width() const { return kind == DataKind::Continuous ? data_dim : seq_len; }

  void validate() const {
    const auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw ConfigError(std::string("arch: ") + what + " must be positive");
    };
    positive(latent_dim, "latent_dim");
    positive(hidden, "hidden");
    positive(eps_hidden, "eps_hidden");
    positive(time_dim, "time_dim");
    if (time_dim % 2 != 0) throw ConfigError("arch: time_dim must be even");
    if (kind == DataKind::Continuous) {
      positive(data_dim, "data_dim");
    } else {
      if (seq_len < 2 || vocab < 2) throw ConfigError("arch: seq_len and vocab must be >= 2");
    }
    if (regressor) positive(regressor_hidden, "regressor_hidden");
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Linear latent classifier: score = w . x1 + bias with unit-norm w. `scale`
/// maps the score to a logit for probabilities.
struct LinearClassifier {
  std::vector<double> w;
  double bias = 0.0;
  double scale = 1.0;

  friend bool operator==(const LinearClassifier&, const LinearClassifier&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;

  friend bool operator==(const NamedTensor& a, const NamedTensor& b) {
    return a.name == b.name && a.tensor.shape == b.tensor.shape && a.tensor.data == b.tensor.data;
  }
};

/// Parameters of encoder, decoder, noise predictor and optional heads, plus
/// optimizer moments. Parameters keep a fixed creation order.
class ModelState {
 public:
  ArchConfig arch;
  std::vector<NamedTensor> params;
  AdamState optimizer;
  std::optional<LinearClassifier> classifier;

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("model has no parameter '" + name + "'");
    return it->second;
  }
  bool has(const std::string& name) const { return index_.contains(name); }
  Tensor& param(const std::string& name) { return params[index_of(name)].tensor; }
  const Tensor& param(const std::string& name) const { return params[index_of(name)].tensor; }

  void add(std::string name, Tensor t) {
    if (index_.contains(name)) throw StateError("duplicate parameter '" + name + "'");
    index_.emplace(name, params.size());
    params.push_back({std::move(name), std::move(t)});
  }

  void reset_optimizer() {
    std::vector<const Tensor*> ts;
    for (const auto& p : params) ts.push_back(&p.tensor);
    optimizer.resize_for(ts);
  }

  void zero_grad() {
    for (auto& p : params) p.tensor.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
  }

  friend bool operator==(const ModelState& a, const ModelState& b) {
    return a.arch == b.arch && a.params == b.params && a.optimizer == b.optimizer &&
           a.classifier == b.classifier;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline void add_linear(ModelState& st, Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out), b(out);
  for (auto& v : w) v = bound * (2.0 * rng.uniform() - 1.0);
  for (auto& v : b) v = bound * (2.0 * rng.uniform() - 1.0);
  st.add(name + ".w", Tensor({in, out}, std::move(w), true));
  st.add(name + ".b", Tensor({1, out}, std::move(b), true));
}

}  // namespace detail

/// Deterministic initialisation: weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline ModelState init_params(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  ModelState st;
  st.arch = arch;
  Rng rng(seed);
  const std::size_t h = arch.hidden;

  detail::add_linear(st, rng, "enc.0", arch.input_width(), h);
  detail::add_linear(st, rng, "enc.1", h, h);
  detail::add_linear(st, rng, "enc.2", h, arch.latent_dim);
  if (arch.logvar_head) detail::add_linear(st, rng, "enc.logvar", h, arch.latent_dim);

  detail::add_linear(st, rng, "dec.0", arch.latent_dim, h);
  if (arch.kind == DataKind::Continuous) {
    detail::add_linear(st, rng, "dec.1", h, h);
    detail::add_linear(st, rng, "dec.2", h, arch.data_dim);
  } else {
    // dec.1 emits one h-wide feature block per position.
    detail::add_linear(st, rng, "dec.1", h, arch.seq_len * h);
    detail::add_linear(st, rng, "dec.2", h, h);
    detail::add_linear(st, rng, "dec.3", h, arch.vocab);
  }

  detail::add_linear(st, rng, "eps.in", arch.latent_dim + arch.time_dim, arch.eps_hidden);
  for (std::size_t i = 0; i < arch.eps_blocks; ++i)
    detail::add_linear(st, rng, "eps.block" + std::to_string(i), arch.eps_hidden, arch.eps_hidden);
  detail::add_linear(st, rng, "eps.out", arch.eps_hidden, arch.latent_dim);

  if (arch.regressor) {
    detail::add_linear(st, rng, "reg.0", arch.latent_dim, arch.regressor_hidden);
    detail::add_linear(st, rng, "reg.1", arch.regressor_hidden, 1);
  }
  st.reset_optimizer();
  return st;
}

/// Binds a ModelState onto a tape. The mutable constructor records parameters as
/// leaves so backward accumulates into them; the const one records constants.
class Graph {
 public:
  Graph(Tape& tape, ModelState& state) : tape_(&tape), mut_(&state), state_(&state) {
    bound_.resize(state.params.size());
  }
  Graph(Tape& tape, const ModelState& state) : tape_(&tape), state_(&state) {
    bound_.resize(state.params.size());
  }

  Tape& tape() { return *tape_; }
  const ArchConfig& arch() const { return state_->arch; }
  const ModelState& state() const { return *state_; }

  Var param(const std::string& name) {
    const auto i = state_->index_of(name);
    if (!bound_[i]) {
      if (mut_ != nullptr)
        bound_[i] = tape_->leaf(mut_->params[i].tensor);
      else
        bound_[i] = tape_->constant(state_->params[i].tensor);
    }
    return *bound_[i];
  }

  /// True when parameter i was recorded on this graph.
  bool touched(std::size_t i) const { return bound_[i].has_value(); }

  Var ones(std::size_t rows) {
    auto it = ones_.find(rows);
    if (it != ones_.end()) return it->second;
    Var v = tape_->constant({rows, 1}, std::vector<double>(rows, 1.0));
    ones_.emplace(rows, v);
    return v;
  }

  /// x W + 1 b for the layer stored as `<prefix>.w`, `<prefix>.b`.
  Var linear(Var x, const std::string& prefix) {
    Var y = matmul(x, param(prefix + ".w"));
    return y + matmul(ones(x.shape()[0]), param(prefix + ".b"));
  }

 private:
  Tape* tape_;
  ModelState* mut_ = nullptr;
  const ModelState* state_;
  std::vector<std::optional<Var>> bound_;
  std::unordered_map<std::size_t, Var> ones_;
};

/// Network input for a batch: continuous rows, or flattened one-hot tokens.
inline Var data_input(Graph& g, const Batch& x0) {
  const auto& a = g.arch();
  if (x0.kind != a.kind)
    throw ShapeError(std::string("data_input: batch is ") + to_string(x0.kind) + ", model expects " +
                     to_string(a.kind));
  if (x0.n == 0) throw ShapeError("data_input: empty batch");
  if (x0.width != a.sample_width())
    throw ShapeError("data_input: sample width " + std::to_string(x0.width) + " != " +
                     std::to_string(a.sample_width()));
  if (a.kind == DataKind::Continuous) return g.tape().constant({x0.n, a.data_dim}, x0.values);
  std::vector<double> onehot(x0.n * a.seq_len * a.vocab, 0.0);
  for (std::size_t i = 0; i < x0.n; ++i)
    for (std::size_t p = 0; p < a.seq_len; ++p) {
      const auto tok = x0.tokens[i * a.seq_len + p];
      if (tok < 0 || static_cast<std::size_t>(tok) >= a.vocab)
        throw RangeError("data_input: token " + std::to_string(tok) + " outside vocabulary");
      onehot[(i * a.seq_len + p) * a.vocab + static_cast<std::size_t>(tok)] = 1.0;
    }
  return g.tape().constant({x0.n, a.seq_len * a.vocab}, std::move(onehot));
}

struct EncoderOut {
  Var mean;
  std::optional<Var> logvar;
};

inline EncoderOut encoder(Graph& g, const Batch& x0) {
  Var h = silu(g.linear(data_input(g, x0), "enc.0"));
  h = silu(g.linear(h, "enc.1"));
  EncoderOut out{g.linear(h, "enc.2"), std::nullopt};
  if (g.arch().logvar_head) out.logvar = g.linear(h, "enc.logvar");
  return out;
}

/// Continuous: [n, data_dim] means. Sequence: [n * seq_len, vocab] logits, row i*L + p.
inline Var decoder(Graph& g, Var z) {
  const auto& a = g.arch();
  if (z.shape().size() != 2 || z.shape()[1] != a.latent_dim)
    throw ShapeError("decoder: latent shape " + shape_str(z.shape()) + ", expected [n," +
                     std::to_string(a.latent_dim) + "]");
  Var h = silu(g.linear(z, "dec.0"));
  h = g.linear(h, "dec.1");
  if (a.kind == DataKind::Continuous) return g.linear(silu(h), "dec.2");
  const std::size_t n = z.shape()[0];
  Var u = silu(reshape(h, {n * a.seq_len, a.hidden}));
  u = silu(g.linear(u, "dec.2"));
  return g.linear(u, "dec.3");
}

/// Sinusoidal features of s / S, one identical row per sample.
inline Tensor time_embedding(std::size_t s, std::size_t steps, std::size_t dim, std::size_t rows) {
  const double t = static_cast<double>(s) / static_cast<double>(steps);
  std::vector<double> row(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::numbers::pi * std::pow(2.0, static_cast<double>(i) * 7.0 / static_cast<double>(std::max<std::size_t>(dim / 2 - 1, 1)));
    row[2 * i] = std::sin(t * freq);
    row[2 * i + 1] = std::cos(t * freq);
  }
  std::vector<double> data;
  data.reserve(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) data.insert(data.end(), row.begin(), row.end());
  return Tensor({rows, dim}, std::move(data));
}

/// Noise predictor eps_theta(z_s, s): MLP with additive skip connections.
inline Var eps_net(Graph& g, Var z, std::size_t s, std::size_t steps) {
  const auto& a = g.arch();
  if (s < 1 || s > steps)
    throw RangeError("eps_net: step " + std::to_string(s) + " outside [1, " + std::to_string(steps) + "]");
  if (z.shape().size() != 2 || z.shape()[1] != a.latent_dim)
    throw ShapeError("eps_net: latent shape " + shape_str(z.shape()));
  const std::size_t n = z.shape()[0];
  Var temb = g.tape().constant(time_embedding(s, steps, a.time_dim, n));
  Var h = silu(g.linear(concat(z, temb), "eps.in"));
  for (std::size_t i = 0; i < a.eps_blocks; ++i) h = h + silu(g.linear(h, "eps.block" + std::to_string(i)));
  return g.linear(h, "eps.out");
}

/// Clean-latent estimate (z_s - sqrt(1 - abar_s) eps_hat) / sqrt(abar_s).
inline Var predict_clean(Var z_s, Var eps_hat, const NoiseSchedule& sched, std::size_t s) {
  const auto c = marginal_coeffs(sched, s);
  return scale(z_s - scale(eps_hat, c.noise), 1.0 / c.clean);
}

inline Var predict_clean(Graph& g, const NoiseSchedule& sched, Var z_s, std::size_t s) {
  return predict_clean(z_s, eps_net(g, z_s, s, sched.steps()), sched, s);
}

/// Latent regressor head, [n, 1].
inline Var regressor(Graph& g, Var z) {
  if (!g.arch().regressor) throw StateError("regress: model has no regressor head");
  return g.linear(silu(g.linear(z, "reg.0")), "reg.1");
}

// ---------------------------------------------------------------------------
// Value-level inference on a read-only model.

inline Tensor encode(const ModelState& st, const Batch& x0) {
  Tape tape;
  Graph g(tape, st);
  return encoder(g, x0).mean.value();
}

/// x1 = mean + sqrt(beta0) * eps0; returns `mean` unchanged when beta0 == 0.
inline Tensor sample_latent(const Tensor& mean, double beta0, Rng& rng) {
  if (beta0 < 0) throw RangeError("sample_latent: beta0 must be >= 0");
  Tensor out = mean;
  if (beta0 == 0.0) return out;
  const double sd = std::sqrt(beta0);
  for (auto& v : out.data) v += sd * rng.normal();
  return out;
}

inline Tensor decode_raw(const ModelState& st, const Tensor& z) {
  Tape tape;
  Graph g(tape, st);
  return decoder(g, tape.constant(z)).value();
}

/// Argmax token per row of a [n*L, V] logit matrix.
inline std::vector<std::int32_t> argmax_tokens(const Tensor& logits) {
  const std::size_t v = logits.cols();
  std::vector<std::int32_t> out(logits.size() / v);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = logits.data.data() + r * v;
    out[r] = static_cast<std::int32_t>(std::max_element(row, row + v) - row);
  }
  return out;
}

/// Decoded samples: continuous means, or argmax sequences.
inline Batch decode(const ModelState& st, const Tensor& z) {
  Tensor raw = decode_raw(st, z);
  const auto& a = st.arch;
  if (a.kind == DataKind::Continuous) return Batch::continuous(z.shape[0], a.data_dim, std::move(raw.data));
  return Batch::sequences(z.shape[0], a.seq_len, argmax_tokens(raw));
}

inline Tensor eps_predict(const ModelState& st, const Tensor& z_s, std::size_t s, std::size_t steps) {
  Tape tape;
  Graph g(tape, st);
  return eps_net(g, tape.constant(z_s), s, steps).value();
}

inline Tensor predict_clean(const ModelState& st, const NoiseSchedule& sched, const Tensor& z_s, std::size_t s) {
  Tape tape;
  Graph g(tape, st);
  return predict_clean(g, sched, tape.constant(z_s), s).value();
}

inline std::vector<double> regress(const ModelState& st, const Tensor& z) {
  Tape tape;
  Graph g(tape, st);
  return regressor(g, tape.constant(z)).value().data;
}

inline double classify(const LinearClassifier& cls, std::span<const double> x1) {
  if (cls.w.size() != x1.size()) throw ShapeError("classify: latent dimension mismatch");
  double s = cls.bias;
  for (std::size_t i = 0; i < x1.size(); ++i) s += cls.w[i] * x1[i];
  return s;
}

inline double classify(const ModelState& st, std::span<const double> x1) {
  if (!st.classifier) throw StateError("classify: model has no classifier head");
  return classify(*st.classifier, x1);
}

// ---------------------------------------------------------------------------
// Flat parameter views, for gradient checks.

inline std::vector<double> flatten_params(const ModelState& st) {
  std::vector<double> out;
  for (const auto& p : st.params) out.insert(out.end(), p.tensor.data.begin(), p.tensor.data.end());
  return out;
}

inline void assign_params(ModelState& st, std::span<const double> flat) {
  if (flat.size() != st.parameter_count()) throw ShapeError("assign_params: length mismatch");
  std::size_t off = 0;
  for (auto& p : st.params) {
    std::copy_n(flat.begin() + off, p.tensor.size(), p.tensor.data.begin());
    off += p.tensor.size();
  }
}

inline std::vector<double> flatten_grads(const ModelState& st) {
  std::vector<double> out;
  for (const auto& p : st.params) {
    if (p.tensor.grad.empty())
      out.insert(out.end(), p.tensor.size(), 0.0);
    else
      out.insert(out.end(), p.tensor.grad.begin(), p.tensor.grad.end());
  }
  return out;
}

/// ValueAndGrad over every parameter of `st` for a loss built on a trainable Graph.
/// `st` is used as scratch; its parameters are restored before returning.
template <typename BuildLoss>
ValueAndGrad parameter_function(ModelState& st, BuildLoss build) {
  return [&st, build](std::span<const double> x, std::vector<double>* grad) {
    const auto saved = flatten_params(st);
    assign_params(st, x);
    st.zero_grad();
    Tape tape;
    Graph g(tape, st);
    Var loss = build(g);
    const double value = loss.item();
    if (grad != nullptr) {
      tape.backward(loss);
      *grad = flatten_grads(st);
    }
    assign_params(st, saved);
    st.zero_grad();
    return value;
  };
}

}  // namespace eddpm
