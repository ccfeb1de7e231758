#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "batch.hpp"
#include "error.hpp"
#include "nets.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace eddpm {

/// Components of one final-step objective evaluation.
///
///   final_total = w * (eps_term + align_term) + rec_term / T',   T' = S + 1
///   total       = w_protein * final_total + regressor_term        (regressor on)
///               = final_total                                      (otherwise)
///
/// eps_term / align_term already carry gamma_s in exact mode.
struct LossBreakdown {
  double total = 0.0;
  double final_total = 0.0;
  double eps_term = 0.0;
  double align_term = 0.0;
  double rec_term = 0.0;
  double regressor_term = 0.0;
  std::size_t s = 0;  // 0 when s was drawn per example
  double w = 1.0;
  std::optional<double> w_protein;
  std::size_t chain_length = 0;

  double combination() const {
    const double f = w * (eps_term + align_term) + rec_term / static_cast<double>(chain_length);
    return w_protein ? *w_protein * f + regressor_term : f;
  }
};

/// Reconstruction loss, averaged over the batch: continuous -> squared error
/// summed over coordinates; sequence -> categorical cross-entropy (nats) summed
/// over positions.
inline Var loss_rec_from_output(Graph& g, const Batch& x0, Var decoded) {
  const auto& a = g.arch();
  if (x0.kind != a.kind) throw ShapeError("loss_rec: batch modality does not match decoder");
  const double inv_n = 1.0 / static_cast<double>(x0.n);
  if (a.kind == DataKind::Continuous) {
    Var target = g.tape().constant({x0.n, a.data_dim}, x0.values);
    return scale(sum(square(decoded - target)), inv_n);
  }
  std::vector<double> onehot(x0.n * a.seq_len * a.vocab, 0.0);
  for (std::size_t r = 0; r < x0.n * a.seq_len; ++r) {
    const auto tok = x0.tokens[r];
    if (tok < 0 || static_cast<std::size_t>(tok) >= a.vocab) throw RangeError("loss_rec: token outside vocabulary");
    onehot[r * a.vocab + static_cast<std::size_t>(tok)] = 1.0;
  }
  Var target = g.tape().constant({x0.n * a.seq_len, a.vocab}, std::move(onehot));
  return scale(sum(log_softmax(decoded) * target), -inv_n);
}

inline Var loss_rec(Graph& g, const Batch& x0, Var x1) { return loss_rec_from_output(g, x0, decoder(g, x1)); }

/// gamma * mean_b || eps - eps_hat ||^2.
inline Var eps_residual_loss(Var eps_hat, const Tensor& eps, double gamma) {
  Var target = eps_hat.tape()->constant(eps);
  return scale(sum(square(target - eps_hat)), gamma / static_cast<double>(eps.rows()));
}

/// gamma_s || eps - eps_theta(sqrt(abar_s) z0 + sqrt(1 - abar_s) eps, s) ||^2, batch mean.
/// Valid for 2 <= s <= S; step 1 belongs to the align term.
inline Var loss_eps(Graph& g, const NoiseSchedule& sched, std::size_t s, Var z0, const Tensor& eps,
                    GammaMode mode) {
  if (s < 2 || s > sched.steps())
    throw RangeError("loss_eps: step " + std::to_string(s) + " outside [2, " + std::to_string(sched.steps()) + "]");
  const auto c = marginal_coeffs(sched, s);
  Var z_s = scale(z0, c.clean) + scale(g.tape().constant(eps), c.noise);
  return eps_residual_loss(eps_net(g, z_s, s, sched.steps()), eps, gamma_rho(sched, s, mode).gamma);
}

/// gamma_1 * rho * mean_b || E(x0) - clean_hat ||^2.
inline Var align_residual_loss(Var encoder_mean, Var clean_hat, double gamma, double rho) {
  const double n = static_cast<double>(encoder_mean.shape()[0]);
  return scale(sum(square(encoder_mean - clean_hat)), gamma * rho / n);
}

/// Align term: `z1` is the noisy latent at step 1, the clean estimate comes from
/// the noise predictor at step 1.
inline Var loss_align(Graph& g, const NoiseSchedule& sched, Var encoder_mean, Var z1, GammaMode mode) {
  const auto gr = gamma_rho(sched, 1, mode);
  return align_residual_loss(encoder_mean, predict_clean(g, sched, z1, 1), gr.gamma, gr.rho);
}

/// Random draws consumed by one final-step evaluation, split out so a step can
/// be replayed with fixed noise.
struct StepDraw {
  std::vector<std::size_t> s;  // one entry per row
  Tensor eps0;                 // encoder noise, [n, d_z] (zeros when beta0 == 0)
  Tensor eps;                  // diffusion noise, [n, d_z]

  bool single_step() const {
    for (auto v : s)
      if (v != s.front()) return false;
    return true;
  }
};

/// s ~ Uniform{1..S} (once per batch unless `per_example`), then the noises.
inline StepDraw draw_step(const NoiseSchedule& sched, std::size_t n, std::size_t latent_dim, Rng& rng,
                          bool per_example = false) {
  if (n == 0) throw ShapeError("draw_step: empty batch");
  StepDraw d;
  if (per_example) {
    for (std::size_t i = 0; i < n; ++i) d.s.push_back(1 + rng.below(sched.steps()));
  } else {
    d.s.assign(n, 1 + rng.below(sched.steps()));
  }
  d.eps0 = Tensor({n, latent_dim}, sched.beta0() > 0 ? rng.normals(n * latent_dim)
                                                     : std::vector<double>(n * latent_dim, 0.0));
  d.eps = Tensor({n, latent_dim}, rng.normals(n * latent_dim));
  return d;
}

/// Optional replacements for the noise predictor / decoder (oracle injection).
struct StepOverrides {
  std::function<Var(Graph&, Var z_s, std::size_t s)> eps;
  std::function<Var(Graph&, Var x1)> decode;
};

struct FinalStep {
  Var total;
  LossBreakdown parts;
};

/// Records the final-step objective for one batch and one set of draws.
inline FinalStep build_final_step(Graph& g, const NoiseSchedule& sched, const Batch& batch, const StepDraw& draw,
                                  double w, GammaMode mode, std::optional<double> w_protein = std::nullopt,
                                  const StepOverrides& over = {}) {
  if (batch.n == 0) throw ShapeError("loss_final_step: empty batch");
  if (!(w > 0)) throw ConfigError("loss_final_step: w must be positive");
  if (draw.s.size() != batch.n) throw ShapeError("loss_final_step: draw does not match batch size");
  const auto& a = g.arch();
  Tape& tape = g.tape();
  const std::size_t n = batch.n;
  const double tprime = static_cast<double>(sched.chain_length());

  Var mean = encoder(g, batch).mean;
  Var x1 = mean;
  if (sched.beta0() > 0) x1 = mean + scale(tape.constant(draw.eps0), std::sqrt(sched.beta0()));

  const auto predict_eps = [&](Var z, std::size_t s) {
    return over.eps ? over.eps(g, z, s) : eps_net(g, z, s, sched.steps());
  };

  LossBreakdown parts;
  parts.w = w;
  parts.w_protein = w_protein;
  parts.chain_length = sched.chain_length();

  Var diffusion_part;
  if (draw.single_step()) {
    const std::size_t s = draw.s.front();
    parts.s = s;
    const auto c = marginal_coeffs(sched, s);
    Var z_s = scale(x1, c.clean) + scale(tape.constant(draw.eps), c.noise);
    const auto gr = gamma_rho(sched, s, mode);
    if (s == 1) {
      Var clean_hat = predict_clean(z_s, predict_eps(z_s, 1), sched, 1);
      diffusion_part = align_residual_loss(mean, clean_hat, gr.gamma, gr.rho);
      parts.align_term = diffusion_part.item();
    } else {
      diffusion_part = eps_residual_loss(predict_eps(z_s, s), draw.eps, gr.gamma);
      parts.eps_term = diffusion_part.item();
    }
  } else {
    if (over.eps) throw StateError("loss_final_step: eps override needs a single step per batch");
    // Per-row coefficients; rows with s == 1 take the align branch.
    const std::size_t d = a.latent_dim;
    std::vector<double> cc(n * d), cn(n * d), inv_cc(n * d), eps_w(n * d, 0.0), align_w(n * d, 0.0);
    bool any_eps = false, any_align = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t s = draw.s[i];
      const auto c = marginal_coeffs(sched, s);
      const auto gr = gamma_rho(sched, s, mode);
      for (std::size_t k = 0; k < d; ++k) {
        cc[i * d + k] = c.clean;
        cn[i * d + k] = c.noise;
        inv_cc[i * d + k] = 1.0 / c.clean;
        if (s == 1) align_w[i * d + k] = gr.gamma * gr.rho / static_cast<double>(n);
        else eps_w[i * d + k] = gr.gamma / static_cast<double>(n);
      }
      (s == 1 ? any_align : any_eps) = true;
    }
    Var eps_c = tape.constant({n, d}, draw.eps.data);
    Var z_s = x1 * tape.constant({n, d}, cc) + eps_c * tape.constant({n, d}, cn);
    Var temb = tape.constant({n, a.time_dim}, [&] {
      std::vector<double> rows;
      for (std::size_t i = 0; i < n; ++i) {
        auto t = time_embedding(draw.s[i], sched.steps(), a.time_dim, 1);
        rows.insert(rows.end(), t.data.begin(), t.data.end());
      }
      return rows;
    }());
    Var h = silu(g.linear(concat(z_s, temb), "eps.in"));
    for (std::size_t i = 0; i < a.eps_blocks; ++i) h = h + silu(g.linear(h, "eps.block" + std::to_string(i)));
    Var eps_hat = g.linear(h, "eps.out");
    std::optional<Var> eps_part, align_part;
    if (any_eps) {
      eps_part = sum(square(eps_c - eps_hat) * tape.constant({n, d}, eps_w));
      parts.eps_term = eps_part->item();
    }
    if (any_align) {
      Var clean_hat = (z_s - eps_hat * tape.constant({n, d}, cn)) * tape.constant({n, d}, inv_cc);
      align_part = sum(square(mean - clean_hat) * tape.constant({n, d}, align_w));
      parts.align_term = align_part->item();
    }
    diffusion_part = eps_part && align_part ? *eps_part + *align_part : (eps_part ? *eps_part : *align_part);
  }

  Var rec = over.decode ? loss_rec_from_output(g, batch, over.decode(g, x1)) : loss_rec(g, batch, x1);
  parts.rec_term = rec.item();
  Var total = scale(diffusion_part, w) + scale(rec, 1.0 / tprime);
  parts.final_total = total.item();

  if (w_protein) {
    if (batch.targets.size() != n) throw StateError("loss_final_step: regressor enabled but batch has no fitness labels");
    Var target = tape.constant({n, 1}, batch.targets);
    Var reg = scale(sum(square(regressor(g, x1) - target)), 1.0 / static_cast<double>(n));
    parts.regressor_term = reg.item();
    total = scale(total, *w_protein) + reg;
  }
  parts.total = total.item();
  return {total, parts};
}

/// Value of the final-step objective (no parameter update).
inline LossBreakdown loss_final_step(const ModelState& st, const NoiseSchedule& sched, const Batch& batch, Rng& rng,
                                     double w, GammaMode mode = GammaMode::Simplified, bool per_example = false) {
  if (batch.n == 0) throw ShapeError("loss_final_step: empty batch");
  const auto draw = draw_step(sched, batch.n, st.arch.latent_dim, rng, per_example);
  Tape tape;
  Graph g(tape, st);
  return build_final_step(g, sched, batch, draw, w, mode).parts;
}

/// KL(N(mean, exp(logvar)) || N(0, I)), summed over dims, averaged over rows.
inline Var gaussian_kl_to_standard(Var mean, Var logvar) {
  const Shape shp = mean.shape();
  Tape& tape = *mean.tape();
  Var ones = tape.constant(shp, std::vector<double>(numel(shp), 1.0));
  Var inner = square(mean) + exp(logvar) - ones - logvar;
  return scale(sum(inner), 0.5 / static_cast<double>(shp[0]));
}

/// Vanilla-VAE objective with a standard-normal prior: reconstruction of a
/// reparameterised sample plus the closed-form diagonal Gaussian KL.
inline Var loss_vae_baseline(Graph& g, const Batch& x0, const Tensor& eps) {
  if (!g.arch().logvar_head) throw ConfigError("loss_vae_baseline: encoder has no log-variance head");
  auto enc = encoder(g, x0);
  Var sd = exp(scale(*enc.logvar, 0.5));
  Var x1 = enc.mean + sd * g.tape().constant(eps);
  return loss_rec(g, x0, x1) + gaussian_kl_to_standard(enc.mean, *enc.logvar);
}

inline double loss_vae_baseline(const ModelState& st, const Batch& x0, Rng& rng) {
  Tape tape;
  Graph g(tape, st);
  Tensor eps({x0.n, st.arch.latent_dim}, rng.normals(x0.n * st.arch.latent_dim));
  return loss_vae_baseline(g, x0, eps).item();
}

/// Mean squared error of the regressor head against fitness labels.
inline Var loss_regressor(Graph& g, Var x1, const std::vector<double>& y) {
  const std::size_t n = x1.shape()[0];
  if (y.size() != n) throw StateError("loss_regressor: missing fitness labels");
  Var target = g.tape().constant({n, 1}, y);
  return scale(sum(square(regressor(g, x1) - target)), 1.0 / static_cast<double>(n));
}

inline double combine_protein(double w_protein, const LossBreakdown& final_step, double regressor_loss) {
  return w_protein * final_step.final_total + regressor_loss;
}

}  // namespace eddpm
