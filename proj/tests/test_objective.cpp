#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"

using namespace eddpm;
using fixtures::Gen;

namespace {

NoiseSchedule demo() { return linear_schedule(4, 0.1, 0.4, 0.0); }

StepDraw fixed_draw(Gen& g, std::size_t n, std::size_t d, std::size_t s) {
  StepDraw draw;
  draw.s.assign(n, s);
  draw.eps0 = g.tensor({n, d});
  draw.eps = g.tensor({n, d});
  return draw;
}

LossBreakdown evaluate(const ModelState& st, const NoiseSchedule& sched, const Batch& x, const StepDraw& draw,
                       double w, GammaMode mode = GammaMode::Simplified,
                       std::optional<double> w_protein = std::nullopt, const StepOverrides& over = {}) {
  Tape t;
  Graph g(t, st);
  return build_final_step(g, sched, x, draw, w, mode, w_protein, over).parts;
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

TEST(Objective, ReconstructionOfPerfectOutputIsZero) {
  const auto st = init_params(fixtures::tiny_arch(DataKind::Continuous), 1);
  const auto x = Batch::continuous(2, 2, {1, 2, 3, 4});
  Tape t;
  Graph g(t, st);
  EXPECT_DOUBLE_EQ(loss_rec_from_output(g, x, t.constant({2, 2}, x.values)).item(), 0.0);
  EXPECT_DOUBLE_EQ(loss_rec_from_output(g, Batch::continuous(1, 2, {1, 0}), t.constant({1, 2}, {0, 0})).item(), 1.0);
}

TEST(Objective, ReconstructionOfUniformLogitsIsLengthTimesLogVocab) {
  ArchConfig a;
  a.kind = DataKind::Sequence;
  a.seq_len = 20;
  a.vocab = 20;
  const auto st = init_params(a, 1);
  Gen gen(1);
  const auto x = gen.sequence_batch(3, 20, 20);
  Tape t;
  Graph g(t, st);
  const double ce = loss_rec_from_output(g, x, t.constant(Tensor::zeros({60, 20}))).item();
  EXPECT_NEAR(ce, 59.914645471079811, 1e-9);
}

TEST(Objective, EpsResidualValues) {
  const Tensor eps({1, 3}, {1, 1, 1});
  Tape t;
  EXPECT_DOUBLE_EQ(eps_residual_loss(t.constant(eps), eps, 1.0).item(), 0.0);
  EXPECT_DOUBLE_EQ(eps_residual_loss(t.constant(Tensor::zeros({1, 3})), eps, 1.0).item(), 3.0);
  const double gamma = gamma_rho(demo(), 2, GammaMode::Exact).gamma;
  EXPECT_NEAR(eps_residual_loss(t.constant(Tensor::zeros({1, 3})), eps, gamma).item(), 3.75, 1e-12);
}

TEST(Objective, AlignResidualValues) {
  Tape t;
  Var a = t.constant({1, 2}, {0.5, -0.25});
  EXPECT_DOUBLE_EQ(align_residual_loss(a, a, 1.0, 9.0).item(), 0.0);
  Var b = t.constant({1, 2}, {0.5, 0.75});
  EXPECT_NEAR(align_residual_loss(a, b, 1.0, demo().rho()).item(), 9.0, 1e-12);
}

TEST(Objective, StepOneBelongsToTheAlignTerm) {
  const auto st = init_params(fixtures::tiny_arch(DataKind::Continuous), 1);
  Tape t;
  Graph g(t, st);
  Gen gen(1);
  EXPECT_THROW(loss_eps(g, demo(), 1, t.constant(gen.tensor({2, 3})), gen.tensor({2, 3}), GammaMode::Exact), RangeError);
  EXPECT_THROW(loss_eps(g, demo(), 5, t.constant(gen.tensor({2, 3})), gen.tensor({2, 3}), GammaMode::Exact), RangeError);
}

TEST(Objective, AlignGradientReachesEncoderAndNoisePredictor) {
  auto st = init_params(fixtures::tiny_arch(DataKind::Continuous), 2);
  Gen gen(2);
  const auto x = gen.continuous_batch(4, 2);
  const auto sched = demo();
  Tape t;
  Graph g(t, st);
  Var mean = encoder(g, x).mean;
  const auto c = marginal_coeffs(sched, 1);
  Var z1 = scale(mean, c.clean) + scale(t.constant(gen.tensor({4, 3})), c.noise);
  t.backward(loss_align(g, sched, mean, z1, GammaMode::Exact));
  const auto nonzero = [](const std::vector<double>& v) {
    for (double x : v)
      if (x != 0.0) return true;
    return false;
  };
  EXPECT_TRUE(nonzero(st.param("enc.0.w").grad));
  EXPECT_TRUE(nonzero(st.param("eps.in.w").grad));
  EXPECT_FALSE(nonzero(st.param("dec.0.w").grad));
}

TEST(Objective, OracleModelHasZeroFinalLoss) {
  const auto st = init_params(fixtures::tiny_arch(DataKind::Continuous), 3);
  Gen gen(3);
  const auto x = gen.continuous_batch(5, 2);
  const auto sched = demo();
  for (std::size_t s = 1; s <= sched.steps(); ++s) {
    const auto draw = fixed_draw(gen, 5, 3, s);
    StepOverrides over;
    over.eps = [&](Graph& g, Var, std::size_t) { return g.tape().constant(draw.eps); };
    over.decode = [&](Graph& g, Var) { return g.tape().constant({5, 2}, x.values); };
    const auto parts = evaluate(st, sched, x, draw, 1.0, GammaMode::Exact, std::nullopt, over);
    EXPECT_NEAR(parts.total, 0.0, 1e-20) << "s=" << s;
  }
}

TEST(Objective, BranchesAreExclusive) {
  const auto st = init_params(fixtures::tiny_arch(DataKind::Continuous), 4);
  Gen gen(4);
  const auto x = gen.continuous_batch(6, 2);
  const auto sched = demo();
  Rng rng(4);
  std::size_t ones = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto parts = loss_final_step(st, sched, x, rng, 1.0);
    ASSERT_GE(parts.s, 1u);
    if (parts.s == 1) {
      ++ones;
      EXPECT_EQ(parts.eps_term, 0.0);
      EXPECT_GT(parts.align_term, 0.0);
    } else {
      EXPECT_EQ(parts.align_term, 0.0);
      EXPECT_GT(parts.eps_term, 0.0);
    }
  }
  EXPECT_GT(ones, 20u);
  EXPECT_LT(ones, 80u);
}

TEST(Objective, DiffusionWeightScalesOnlyTheDiffusionPart) {
  const auto st = init_params(fixtures::tiny_arch(DataKind::Continuous), 5);
  Gen gen(5);
  const auto x = gen.continuous_batch(4, 2);
  const auto sched = demo();
  for (std::size_t s = 1; s <= sched.steps(); ++s) {
    const auto draw = fixed_draw(gen, 4, 3, s);
    const auto one = evaluate(st, sched, x, draw, 1.0);
    const auto eight = evaluate(st, sched, x, draw, 8.0);
    const auto two = evaluate(st, sched, x, draw, 2.0);
    const double tp = static_cast<double>(sched.chain_length());
    EXPECT_NEAR(eight.total - eight.rec_term / tp, 8 * (one.total - one.rec_term / tp), 1e-12);
    EXPECT_NEAR(two.total - two.rec_term / tp, 2 * (one.total - one.rec_term / tp), 1e-12);
    EXPECT_DOUBLE_EQ(eight.rec_term, one.rec_term);
  }
}

TEST(Objective, ExactModeMultipliesByGamma) {
  const auto st = init_params(fixtures::tiny_arch(DataKind::Continuous), 6);
  Gen gen(6);
  const auto x = gen.continuous_batch(4, 2);
  const auto sched = demo();
  const auto draw = fixed_draw(gen, 4, 3, 2);
  const auto simple = evaluate(st, sched, x, draw, 1.0, GammaMode::Simplified);
  const auto exact = evaluate(st, sched, x, draw, 1.0, GammaMode::Exact);
  EXPECT_NEAR(exact.eps_term, 1.25 * simple.eps_term, 1e-12);
}

TEST(Objective, BreakdownCombinesToTotal) {
  Gen gen(7);
  auto arch = fixtures::tiny_arch(DataKind::Sequence);
  arch.regressor = true;
  const auto st = init_params(arch, 7);
  auto x = gen.sequence_batch(4, 3, 4);
  x.targets = gen.normals(4);
  const auto sched = demo();
  for (std::size_t s = 1; s <= sched.steps(); ++s) {
    const auto draw = fixed_draw(gen, 4, 3, s);
    for (auto wp : {std::optional<double>{}, std::optional<double>{0.5}}) {
      const auto p = evaluate(st, sched, x, draw, 0.3, GammaMode::Exact, wp);
      EXPECT_NEAR(p.combination(), p.total, 1e-12);
      if (wp) {
        EXPECT_NEAR(combine_protein(*wp, p, p.regressor_term), p.total, 1e-12);
      }
    }
  }
}

TEST(Objective, ProteinCombination) {
  LossBreakdown f;
  f.final_total = 2.0;
  EXPECT_DOUBLE_EQ(combine_protein(1.0, f, 3.0), 5.0);
}

TEST(Objective, FinalObjectiveIsNonNegativeAndGradientsFinite) {
  Gen gen(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto kind = trial % 2 ? DataKind::Sequence : DataKind::Continuous;
    auto st = init_params(fixtures::random_arch(gen, kind), 200 + trial);
    const auto x = fixtures::random_batch(gen, st.arch, gen.size(1, 6));
    const auto sched = linear_schedule(gen.size(2, 12), 0.01, 0.3, trial % 3 == 0 ? 0.05 : 0.0);
    Rng rng(trial);
    const auto draw = draw_step(sched, x.n, st.arch.latent_dim, rng, trial % 4 == 0);
    Tape t;
    Graph g(t, st);
    auto fs = build_final_step(g, sched, x, draw, gen.real(0.01, 10), trial % 2 ? GammaMode::Exact : GammaMode::Simplified);
    EXPECT_GE(fs.parts.total, 0.0);
    EXPECT_GE(fs.parts.eps_term, 0.0);
    EXPECT_GE(fs.parts.align_term, 0.0);
    EXPECT_GE(fs.parts.rec_term, 0.0);
    t.backward(fs.total);
    EXPECT_TRUE(all_finite(flatten_grads(st))) << "trial " << trial;
    st.zero_grad();
  }
}

TEST(Objective, FinalObjectiveGradientsMatchFiniteDifferences) {
  Gen gen(9);
  for (int trial = 0; trial < 24; ++trial) {
    const auto kind = trial % 2 ? DataKind::Sequence : DataKind::Continuous;
    auto arch = fixtures::random_arch(gen, kind);
    const bool with_reg = kind == DataKind::Sequence && trial % 3 == 1;
    arch.regressor = with_reg;
    auto st = init_params(arch, 300 + trial);
    auto x = fixtures::random_batch(gen, arch, gen.size(1, 4));
    if (with_reg) x.targets = gen.normals(x.n);
    const auto sched = linear_schedule(gen.size(2, 6), 0.05, 0.4, trial % 4 == 0 ? 0.1 : 0.0);
    Rng rng(trial);
    auto draw = draw_step(sched, x.n, arch.latent_dim, rng, trial % 5 == 0);
    if (trial % 6 == 2) draw.s.assign(x.n, 1);
    const double w = gen.real(0.1, 3);
    const auto mode = trial % 2 ? GammaMode::Exact : GammaMode::Simplified;
    const auto wp = with_reg ? std::optional<double>{0.5} : std::nullopt;
    auto f = parameter_function(st, [&](Graph& g) { return build_final_step(g, sched, x, draw, w, mode, wp).total; });
    EXPECT_LT(fixtures::gradient_error(f, flatten_params(st), 1e-4), 1e-4) << "trial " << trial;
  }
}

TEST(Objective, KlToStandardNormalValues) {
  Tape t;
  EXPECT_DOUBLE_EQ(gaussian_kl_to_standard(t.constant(Tensor::zeros({2, 3})), t.constant(Tensor::zeros({2, 3}))).item(),
                   0.0);
  EXPECT_NEAR(gaussian_kl_to_standard(t.constant({1, 1}, {1.0}), t.constant({1, 1}, {0.0})).item(), 0.5, 1e-15);
}

TEST(Objective, KlMatchesMonteCarlo) {
  const double mu = 0.7, logvar = -0.4, sd = std::exp(0.5 * logvar);
  Tape t;
  const double closed = gaussian_kl_to_standard(t.constant({1, 1}, {mu}), t.constant({1, 1}, {logvar})).item();
  Rng rng(10);
  const std::size_t n = 1000000;
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = rng.normal();
    const double z = mu + sd * e;
    const double v = -0.5 * e * e - std::log(sd) + 0.5 * z * z;
    s += v;
    s2 += v * v;
  }
  const double mean = s / static_cast<double>(n);
  const double se = std::sqrt((s2 / static_cast<double>(n) - mean * mean) / static_cast<double>(n));
  EXPECT_LT(std::abs(mean - closed), 3 * se);
}

TEST(Objective, VaeBaselineNeedsLogvarHeadAndHasCorrectGradients) {
  Gen gen(11);
  const auto plain = init_params(fixtures::tiny_arch(DataKind::Continuous), 1);
  const auto x = gen.continuous_batch(3, 2);
  Rng rng(1);
  EXPECT_THROW(loss_vae_baseline(plain, x, rng), ConfigError);
  for (auto kind : {DataKind::Continuous, DataKind::Sequence}) {
    auto arch = fixtures::tiny_arch(kind);
    arch.logvar_head = true;
    auto st = init_params(arch, 12);
    const auto xb = fixtures::random_batch(gen, arch, 3);
    const Tensor eps = gen.tensor({3, arch.latent_dim});
    auto f = parameter_function(st, [&](Graph& g) { return loss_vae_baseline(g, xb, eps); });
    EXPECT_LT(fixtures::gradient_error(f, flatten_params(st), 1e-4), 1e-4);
  }
}

TEST(Objective, RegressorTermNeedsLabels) {
  auto arch = fixtures::tiny_arch(DataKind::Sequence);
  arch.regressor = true;
  const auto st = init_params(arch, 13);
  Gen gen(13);
  const auto x = gen.sequence_batch(2, 3, 4);
  Tape t;
  Graph g(t, st);
  EXPECT_THROW(loss_regressor(g, t.constant(gen.tensor({2, 3})), {1.0}), StateError);
  const auto draw = fixed_draw(gen, 2, 3, 2);
  EXPECT_THROW(build_final_step(g, demo(), x, draw, 1.0, GammaMode::Simplified, 0.5), StateError);
}

TEST(Objective, RegressorTermIsZeroForExactPredictions) {
  auto arch = fixtures::tiny_arch(DataKind::Sequence);
  arch.regressor = true;
  const auto st = init_params(arch, 14);
  Gen gen(14);
  const Tensor z = gen.tensor({4, 3});
  const auto y = regress(st, z);
  Tape t;
  Graph g(t, st);
  EXPECT_NEAR(loss_regressor(g, t.constant(z), y).item(), 0.0, 1e-30);
}

TEST(Objective, NonPositiveWeightIsRejected) {
  const auto st = init_params(fixtures::tiny_arch(DataKind::Continuous), 15);
  Gen gen(15);
  const auto x = gen.continuous_batch(2, 2);
  EXPECT_THROW(evaluate(st, demo(), x, fixed_draw(gen, 2, 3, 2), 0.0), ConfigError);
}
