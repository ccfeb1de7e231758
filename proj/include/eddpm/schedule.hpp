#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace eddpm {

/// Variance used by the ancestral sampler (and by the exact loss weights).
enum class SigmaMode { PosteriorVariance, Beta };

/// Loss weighting: `Exact` applies gamma_s; `Simplified` sets every gamma_s to 1.
enum class GammaMode { Exact, Simplified };

inline const char* to_string(SigmaMode m) { return m == SigmaMode::Beta ? "beta" : "posterior"; }
inline const char* to_string(GammaMode m) { return m == GammaMode::Exact ? "exact" : "simplified"; }

/// Constants of the latent noising chain z_0 -> z_1 -> ... -> z_S.
///
/// z_0 is the clean latent produced by the encoder. Step s (1-based) applies
/// q(z_s | z_{s-1}) = N(sqrt(1 - beta_s) z_{s-1}, beta_s I). The full chain of
/// the model therefore has T = S + 1 steps, the first being the encoder.
///
/// All per-step accessors take 1-based s.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  NoiseSchedule(std::vector<double> betas, double beta0, SigmaMode sigma_mode = SigmaMode::PosteriorVariance)
      : beta_(std::move(betas)), beta0_(beta0), sigma_mode_(sigma_mode) {
    if (beta_.size() < 2) throw ConfigError("schedule: need at least 2 noising steps");
    if (!(beta0_ >= 0.0) || !std::isfinite(beta0_)) throw ConfigError("schedule: beta0 must be >= 0");
    double prod = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
      const double b = beta_[i];
      if (!(b > 0.0 && b < 1.0)) throw ConfigError("schedule: beta values must lie in (0, 1)");
      alpha_.push_back(1.0 - b);
      prod *= 1.0 - b;
      alpha_bar_.push_back(prod);
    }
    for (std::size_t s = 1; s <= steps(); ++s) {
      const double bt = s == 1 ? beta(1) : (1.0 - alpha_bar(s - 1)) / (1.0 - alpha_bar(s)) * beta(s);
      beta_tilde_.push_back(bt);
      sigma2_.push_back(sigma_mode_ == SigmaMode::Beta ? beta(s) : bt);
    }
    for (std::size_t s = 1; s <= steps(); ++s) {
      const double b = beta(s);
      gamma_.push_back(b * b / (2.0 * sigma2(s) * alpha(s) * (1.0 - alpha_bar(s))));
    }
    rho_ = alpha(1) * (1.0 - alpha_bar(1)) / (beta(1) * beta(1));
  }

  std::size_t steps() const { return beta_.size(); }
  /// Length of the full chain including the encoder step.
  std::size_t chain_length() const { return beta_.size() + 1; }

  double beta(std::size_t s) const { return beta_[index(s)]; }
  double alpha(std::size_t s) const { return alpha_[index(s)]; }
  double alpha_bar(std::size_t s) const { return alpha_bar_[index(s)]; }
  /// beta_tilde_1 is defined as beta_1.
  double beta_tilde(std::size_t s) const { return beta_tilde_[index(s)]; }
  double sigma2(std::size_t s) const { return sigma2_[index(s)]; }
  double gamma(std::size_t s) const { return gamma_[index(s)]; }
  double rho() const { return rho_; }
  double beta0() const { return beta0_; }
  SigmaMode sigma_mode() const { return sigma_mode_; }
  const std::vector<double>& betas() const { return beta_; }

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  std::size_t index(std::size_t s) const {
    if (s < 1 || s > beta_.size())
      throw RangeError("schedule: step " + std::to_string(s) + " outside [1, " +
                       std::to_string(beta_.size()) + "]");
    return s - 1;
  }

  std::vector<double> beta_;
  double beta0_ = 0.0;
  SigmaMode sigma_mode_ = SigmaMode::PosteriorVariance;
  std::vector<double> alpha_, alpha_bar_, beta_tilde_, sigma2_, gamma_;
  double rho_ = 0.0;
};

/// beta linearly spaced from beta_start to beta_end inclusive.
inline NoiseSchedule linear_schedule(std::size_t steps, double beta_start, double beta_end, double beta0,
                                     SigmaMode sigma_mode = SigmaMode::PosteriorVariance) {
  if (steps < 2) throw ConfigError("linear_schedule: S must be >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("linear_schedule: need 0 < beta_start <= beta_end < 1");
  if (!(beta0 >= 0.0)) throw ConfigError("linear_schedule: beta0 must be >= 0");
  std::vector<double> beta(steps);
  for (std::size_t i = 0; i < steps; ++i)
    beta[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
  return NoiseSchedule(std::move(beta), beta0, sigma_mode);
}

/// Default betas: the DDPM 1e-4..0.02 range over 1000 steps, rescaled to `steps`
/// so the chain still ends near pure noise.
inline double default_beta_start(std::size_t steps) { return 1e-4 * 1000.0 / static_cast<double>(steps); }
inline double default_beta_end(std::size_t steps) { return std::min(0.02 * 1000.0 / static_cast<double>(steps), 0.999); }

struct MarginalCoeffs {
  double clean;
  double noise;
};

/// z_s = clean * z_0 + noise * eps.
inline MarginalCoeffs marginal_coeffs(const NoiseSchedule& sched, std::size_t s) {
  const double ab = sched.alpha_bar(s);
  return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

struct PosteriorCoeffs {
  double clean;
  double noisy;
  double variance;
};

/// q(z_{s-1} | z_s, z_0) = N(clean * z_0 + noisy * z_s, variance I), for s >= 2.
inline PosteriorCoeffs posterior_coeffs(const NoiseSchedule& sched, std::size_t s) {
  if (s < 2 || s > sched.steps())
    throw RangeError("posterior_coeffs: step " + std::to_string(s) + " outside [2, " +
                     std::to_string(sched.steps()) + "]");
  const double ab = sched.alpha_bar(s);
  const double ab_prev = sched.alpha_bar(s - 1);
  return {std::sqrt(ab_prev) * sched.beta(s) / (1.0 - ab),
          std::sqrt(sched.alpha(s)) * (1.0 - ab_prev) / (1.0 - ab), sched.beta_tilde(s)};
}

struct GammaRho {
  double gamma;
  double rho;
};

inline GammaRho gamma_rho(const NoiseSchedule& sched, std::size_t s, GammaMode mode = GammaMode::Exact) {
  return {mode == GammaMode::Exact ? sched.gamma(s) : 1.0, sched.rho()};
}

}  // namespace eddpm
