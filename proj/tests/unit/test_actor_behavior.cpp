#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gem/actor_em.hpp"
#include "gem/behavior_mle.hpp"
#include "gem/error.hpp"
#include "test_support.hpp"

using namespace gem;

namespace {

CgmmSpec spec_of(std::size_t K, std::size_t S, std::size_t A, std::vector<std::size_t> hidden = {8, 8}) {
  CgmmSpec s;
  s.state_dim = S;
  s.action_dim = A;
  s.K = K;
  s.hidden = std::move(hidden);
  return s;
}

GmmHeads random_heads(std::mt19937_64& rng, int K, int A) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.5, 0.3);
  GmmHeads h{Vector(K), Matrix(A, K), Matrix(A, K)};
  for (int k = 0; k < K; ++k) {
    h.logits[k] = n(rng);
    for (int d = 0; d < A; ++d) {
      h.mu(d, k) = n(rng);
      h.log_std(d, k) = u(rng);
    }
  }
  return h;
}

double shannon(const Vector& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

// Two action clusters at +-0.5 (first coordinate), states uniform in [-1,1].
void bimodal_data(std::size_t n, std::uint64_t seed, Matrix& S, Matrix& A) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  S.resize(1, static_cast<Eigen::Index>(n));
  A.resize(1, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < S.cols(); ++i) {
    S(0, i) = u(rng);
    A(0, i) = (i % 2 ? 0.5 : -0.5) + noise(rng);
  }
}

}  // namespace

TEST(LooseElbo, SingleComponentEqualsLogProb) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    auto h = random_heads(rng, 1, 2);
    Vector a = Vector::Random(2);
    EXPECT_EQ(loose_elbo(h, a), log_prob(h, a));
  }
}

TEST(LooseElbo, IdenticalComponents) {
  GmmHeads h{Vector::Zero(3), Matrix::Constant(2, 3, 0.1), Matrix::Constant(2, 3, -0.7)};
  Vector a(2);
  a << 0.4, -0.2;
  EXPECT_NEAR(loose_elbo(h, a), log_prob(h, a) - std::log(3.0), 1e-12);
}

TEST(LooseElbo, JensenGapIsResponsibilityEntropy) {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int K = 1 + static_cast<int>(rng() % 6);
    auto h = random_heads(rng, K, 2);
    Vector a = Vector::Random(2) * 2.0;
    const double gap = log_prob(h, a) - loose_elbo(h, a);
    EXPECT_GE(gap, -1e-12);
    worst = std::max(worst, std::abs(gap - shannon(responsibilities(h, a))));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Guidance, WeightExamples) {
  GuidanceConfig c;
  c.beta = 0.0;
  EXPECT_EQ(guidance_weight(5.0, c), 1.0);
  c.beta = 1.0;
  EXPECT_NEAR(guidance_weight(std::log(2.0), c), 2.0, 1e-14);
  c.beta = 3.0;
  EXPECT_EQ(guidance_weight(100.0, c), c.omega_max);
  double prev = 0.0;
  for (double a = -5.0; a <= 5.0; a += 0.25) {
    const double w = guidance_weight(a, c);
    EXPECT_GE(w, prev);
    EXPECT_GT(w, 0.0);
    EXPECT_LE(w, c.omega_max);
    prev = w;
  }
}

TEST(Guidance, ConstantShiftRescalesBeforeClipping) {
  GuidanceConfig c;
  c.beta = 2.0;
  c.omega_max = 1e300;
  Vector adv(5);
  adv << -0.3, 0.1, 0.0, 0.8, -1.2;
  const double shift = 0.7;
  Vector w0 = guidance_weights(adv, c);
  Vector w1 = guidance_weights((adv.array() + shift).matrix(), c);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(w1[i], std::exp(c.beta * shift) * w0[i], 1e-12 * w1[i]);
  Vector n0 = w0 / w0.sum(), n1 = w1 / w1.sum();
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(n0[i], n1[i], 1e-14);
}

TEST(GateEntropy, Examples) {
  GmmHeads even{Vector::Zero(2), Matrix::Zero(1, 2), Matrix::Zero(1, 2)};
  EXPECT_NEAR(gate_entropy(even), std::log(2.0), 3e-6);
  GmmHeads onehot{Vector(2), Matrix::Zero(1, 2), Matrix::Zero(1, 2)};
  onehot.logits << 0.0, -1000.0;
  EXPECT_LE(std::abs(gate_entropy(onehot)), 1e-5);
  std::mt19937_64 rng(3);
  GmmHeads uni{Vector::Zero(4), Matrix::Zero(1, 4), Matrix::Zero(1, 4)};
  const double hmax = gate_entropy(uni);
  for (int t = 0; t < 200; ++t) {
    GmmHeads h = random_heads(rng, 4, 1);
    EXPECT_LE(gate_entropy(h), hmax);
  }
}

TEST(GateEntropy, LogitGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 30; ++t) {
    GmmHeads h = random_heads(rng, 4, 1);
    Vector g = gate_entropy_logit_grad(h);
    for (int k = 0; k < 4; ++k) {
      const double num = gem::testing::central_diff([&] { return gate_entropy(h); }, h.logits[k]);
      EXPECT_LT(gem::testing::rel_err(g[k], num), 1e-6);
    }
  }
}

namespace {

struct ActorProbe {
  Cgmm model;
  Matrix S, A;
  Vector omega;
};

ActorProbe make_probe(std::uint64_t seed, std::size_t K = 3) {
  ActorProbe p{Cgmm(spec_of(K, 2, 2), seed), Matrix::Random(2, 6), Matrix::Random(2, 6) * 0.8, Vector(6)};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.8, -0.2);
  for (double& v : p.model.mutable_log_std().values()) v = u(rng);
  std::uniform_real_distribution<double> w(0.2, 3.0);
  for (auto& x : p.omega) x = w(rng);
  return p;
}

double fd_all(Cgmm& m, const CgmmGrad& g, const std::function<double()>& f, std::size_t per_group,
              std::mt19937_64& rng, std::size_t& checked) {
  double worst = 0.0;
  worst = std::max(worst, gem::testing::fd_max_rel_err(m.mutable_gating_net().params(), g.gating, f, per_group, rng, &checked));
  worst = std::max(worst, gem::testing::fd_max_rel_err(m.mutable_mean_net().params(), g.mean, f, per_group, rng, &checked));
  worst = std::max(worst, gem::testing::fd_max_rel_err(m.mutable_log_std(), g.log_std, f, per_group, rng, &checked));
  return worst;
}

}  // namespace

TEST(ActorLoss, DetachedGradientMatchesFixedResponsibilitySurrogate) {
  auto p = make_probe(10);
  GuidanceConfig cfg;
  cfg.alpha_entropy = 0.05;
  const Matrix gamma0 = batch_responsibilities(p.model, p.S, p.A);
  CgmmGrad g = p.model.zero_grad();
  actor_loss_and_grad(p.model, p.S, p.A, p.omega, cfg, &g);

  std::mt19937_64 rng(5);
  std::size_t checked = 0;
  auto surrogate = [&] { return actor_loss_and_grad(p.model, p.S, p.A, p.omega, cfg, nullptr, &gamma0).loss; };
  EXPECT_LT(fd_all(p.model, g, surrogate, 50, rng, checked), 1e-4);
  EXPECT_GE(checked, 100u);

  // Letting the responsibilities move with the parameters gives a different
  // derivative; the detached gradient must not pick up that path.
  auto moving = [&] { return actor_loss_and_grad(p.model, p.S, p.A, p.omega, cfg, nullptr).loss; };
  double max_gap = 0.0;
  for (std::size_t i = 0; i < g.mean.size(); ++i) {
    double& x = p.model.mutable_mean_net().params()[i];
    max_gap = std::max(max_gap, std::abs(g.mean[i] - gem::testing::central_diff(moving, x)));
  }
  EXPECT_GT(max_gap, 1e-4);
}

TEST(ActorLoss, UndetachedGradientMatchesFullObjective) {
  auto p = make_probe(11);
  GuidanceConfig cfg;
  cfg.detach_gamma = false;
  CgmmGrad g = p.model.zero_grad();
  actor_loss_and_grad(p.model, p.S, p.A, p.omega, cfg, &g);
  std::mt19937_64 rng(6);
  std::size_t checked = 0;
  auto full = [&] { return actor_loss_and_grad(p.model, p.S, p.A, p.omega, cfg, nullptr).loss; };
  EXPECT_LT(fd_all(p.model, g, full, 50, rng, checked), 1e-4);
}

TEST(ActorLoss, PerturbedResponsibilitiesOnlyEnterThroughWeights) {
  auto p = make_probe(12);
  GuidanceConfig cfg;
  Matrix gamma = batch_responsibilities(p.model, p.S, p.A);
  CgmmGrad fresh = p.model.zero_grad(), pinned = p.model.zero_grad();
  actor_loss_and_grad(p.model, p.S, p.A, p.omega, cfg, &fresh);
  actor_loss_and_grad(p.model, p.S, p.A, p.omega, cfg, &pinned, &gamma);
  EXPECT_EQ(fresh.gating, pinned.gating);
  EXPECT_EQ(fresh.mean, pinned.mean);
  EXPECT_EQ(fresh.log_std, pinned.log_std);
}

TEST(ActorLoss, UnguidedStepIsResponsibilityWeightedMle) {
  auto p = make_probe(13);
  GuidanceConfig cfg;
  cfg.alpha_entropy = 0.0;
  CgmmGrad actor = p.model.zero_grad(), mle = p.model.zero_grad();
  const Vector ones = Vector::Ones(p.S.cols());
  auto loss = actor_loss_and_grad(p.model, p.S, p.A, ones, cfg, &actor);
  behavior_nll_and_grad(p.model, p.S, p.A, &mle);
  double worst = 0.0;
  for (std::size_t i = 0; i < actor.mean.size(); ++i) worst = std::max(worst, std::abs(actor.mean[i] - mle.mean[i]));
  for (std::size_t i = 0; i < actor.gating.size(); ++i) worst = std::max(worst, std::abs(actor.gating[i] - mle.gating[i]));
  for (std::size_t i = 0; i < actor.log_std.size(); ++i) worst = std::max(worst, std::abs(actor.log_std[i] - mle.log_std[i]));
  EXPECT_LT(worst, 1e-12);
  EXPECT_DOUBLE_EQ(loss.loss, loss.weighted_nelbo);
}

TEST(ActorStep, BimodalNllDecreases) {
  Matrix S, A;
  bimodal_data(512, 7, S, A);
  ActorGmm actor(spec_of(2, 1, 1, {32, 32}), 14);
  GuidanceConfig cfg;
  AdamConfig adam;
  adam.lr = 3e-3;
  CgmmOptimizer opt(adam, actor);
  const double before = behavior_nll_and_grad(actor, S, A, nullptr);
  const Vector ones = Vector::Ones(S.cols());
  for (int t = 0; t < 500; ++t) actor_step(actor, opt, S, A, ones, cfg);
  EXPECT_LT(behavior_nll_and_grad(actor, S, A, nullptr), before);
}

TEST(ActorStep, EntropyBonusPreventsGatingCollapse) {
  Matrix S, A;
  bimodal_data(512, 8, S, A);
  ActorGmm actor(spec_of(2, 1, 1, {32, 32}), 15);
  GuidanceConfig cfg;
  cfg.alpha_entropy = 1e-3;
  AdamConfig adam;
  adam.lr = 3e-3;
  CgmmOptimizer opt(adam, actor);
  const Vector ones = Vector::Ones(S.cols());
  for (int t = 0; t < 1500; ++t) actor_step(actor, opt, S, A, ones, cfg);
  double min_w = 1.0;
  for (Eigen::Index b = 0; b < S.cols(); ++b) {
    min_w = std::min(min_w, actor.heads(S.col(b)).weights().minCoeff());
  }
  EXPECT_GT(min_w, 0.05);
}

TEST(ActorStep, NonFiniteWeightsAbort) {
  auto p = make_probe(16);
  CgmmOptimizer opt(AdamConfig{}, p.model);
  auto before = p.model.mean_net().params();
  p.omega[2] = NAN;
  EXPECT_THROW(actor_step(p.model, opt, p.S, p.A, p.omega, GuidanceConfig{}), NumericalError);
  EXPECT_EQ(p.model.mean_net().params(), before);
}

TEST(BehaviorMle, GradientMatchesFiniteDifferences) {
  auto p = make_probe(17, 4);
  CgmmGrad g = p.model.zero_grad();
  behavior_nll_and_grad(p.model, p.S, p.A, &g);
  std::mt19937_64 rng(7);
  std::size_t checked = 0;
  auto f = [&] { return behavior_nll_and_grad(p.model, p.S, p.A, nullptr); };
  EXPECT_LT(fd_all(p.model, g, f, 50, rng, checked), 1e-4);
  EXPECT_GE(checked, 100u);
}

TEST(BehaviorMle, RepeatedPairApproachesClampCeiling) {
  Matrix S = Matrix::Constant(1, 64, 0.3);
  Matrix A = Matrix::Constant(1, 64, 0.2);
  // One component, so the gating weight is exactly 1 and the ceiling is the
  // clamped Gaussian's peak density.
  BehaviorGmm b(spec_of(1, 1, 1, {16}), 18);
  PretrainConfig cfg;
  cfg.steps = 3000;
  cfg.batch_size = 64;
  cfg.adam.lr = 3e-3;
  cfg.freeze_after = false;
  pretrain_behavior(b, S, A, cfg, 1);
  // A second pass with a small step removes the Adam jitter of the mean,
  // which matters once sigma sits at 1e-3.
  cfg.steps = 1000;
  cfg.adam.lr = 1e-5;
  cfg.freeze_after = true;
  pretrain_behavior(b, S, A, cfg, 2);
  const double ceiling = -0.5 * std::log(2.0 * M_PI) - std::log(1e-3);
  const double lp = b.log_prob(std::vector<double>{0.3}, std::vector<double>{0.2});
  EXPECT_LE(lp, ceiling + 1e-9);
  EXPECT_GT(lp, ceiling - 1.0);
  EXPECT_TRUE(b.frozen());
}

TEST(BehaviorMle, BimodalFitBeatsSingleGaussian) {
  Matrix S = Matrix::Zero(1, 200);
  Matrix A(1, 200);
  for (int i = 0; i < 200; ++i) A(0, i) = i % 2 ? 0.5 : -0.5;
  BehaviorGmm b(spec_of(2, 1, 1, {16}), 19);
  PretrainConfig cfg;
  cfg.steps = 2000;
  cfg.batch_size = 200;
  cfg.adam.lr = 1e-2;
  auto res = pretrain_behavior(b, S, A, cfg, 2);
  auto h = b.heads(std::vector<double>{0.0});
  double lo = std::min(h.mu(0, 0), h.mu(0, 1)), hi = std::max(h.mu(0, 0), h.mu(0, 1));
  EXPECT_NEAR(lo, -0.5, 0.05);
  EXPECT_NEAR(hi, 0.5, 0.05);
  // Closed-form single-Gaussian MLE: mean 0, variance 0.25.
  const double single_nll = 0.5 * std::log(2.0 * M_PI * 0.25) + 0.5;
  EXPECT_LT(res.nll_end, single_nll);
  EXPECT_LT(res.nll_end, res.nll_start);
}

TEST(BehaviorMle, FreezeSemantics) {
  Matrix S = Matrix::Random(2, 32), A = Matrix::Random(2, 32) * 0.5;
  BehaviorGmm b(spec_of(2, 2, 2), 20);
  PretrainConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 8;
  pretrain_behavior(b, S, A, cfg, 3);
  ASSERT_TRUE(b.frozen());
  std::vector<double> s{0.1, 0.1}, a{0.2, 0.0};
  const double lp = b.log_prob(s, a);
  EXPECT_THROW(pretrain_behavior(b, S, A, cfg, 3), FrozenModelError);
  EXPECT_EQ(b.log_prob(s, a), lp);
}

TEST(BehaviorMle, DivergenceRestoresLastGoodParameters) {
  Matrix S = Matrix::Random(1, 16), A = Matrix::Random(1, 16) * 0.5;
  A(0, 5) = NAN;
  BehaviorGmm b(spec_of(2, 1, 1), 21);
  auto before = b.mean_net().params();
  PretrainConfig cfg;
  cfg.steps = 50;
  cfg.batch_size = 16;
  EXPECT_THROW(pretrain_behavior(b, S, A, cfg, 4), NumericalError);
  EXPECT_EQ(b.mean_net().params(), before);
  EXPECT_FALSE(b.frozen());
}
