#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include <gtest/gtest.h>

#include "gem/trainer.hpp"
#include "test_support.hpp"

using namespace gem;
using gem::testing::temp_path;

namespace {

TrainConfig small_config(std::size_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 64;
  c.hidden = {16, 16};
  c.ensemble_size = 4;
  c.behavior_steps = 200;
  c.log_every = 25;
  return c;
}

const OfflineDataset& bandit_data() {
  static const OfflineDataset d = generate_dataset(BimodalBandit(), 2000, 5);
  return d;
}

const NormalizationAnchors kAnchors{0.1, 1.0};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double mean_of(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  return std::accumulate(v.begin() + lo, v.begin() + hi, 0.0) / static_cast<double>(hi - lo);
}

}  // namespace

TEST(Trainer, ZeroStepsGivesEvaluableCheckpoint) {
  const auto res = train_agent(bandit_data(), small_config(0), 1, kAnchors);
  EXPECT_TRUE(res.log.empty());
  const auto path = temp_path("zero_steps.ckpt");
  res.agent.save(path);
  const Agent back = Agent::load(path);
  InferenceConfig ic;
  ic.N = 8;
  const EvalResult ev = evaluate_agent(back, BimodalBandit(), ic, 5, 3);
  EXPECT_EQ(ev.returns.size(), 5u);
  EXPECT_TRUE(std::isfinite(ev.normalized_score));
  EXPECT_TRUE(back.actor.frozen());
}

TEST(Trainer, SameSeedGivesIdenticalCheckpoints) {
  const auto a = temp_path("det_a.ckpt"), b = temp_path("det_b.ckpt"), c = temp_path("det_c.ckpt");
  train_agent(bandit_data(), small_config(60), 7, kAnchors).agent.save(a);
  train_agent(bandit_data(), small_config(60), 7, kAnchors).agent.save(b);
  train_agent(bandit_data(), small_config(60), 8, kAnchors).agent.save(c);
  const std::string sa = slurp(a);
  ASSERT_FALSE(sa.empty());
  EXPECT_EQ(sa, slurp(b));
  EXPECT_NE(sa, slurp(c));
}

TEST(Trainer, LossesTrendDownOnBandit) {
  TrainConfig cfg = small_config(1200);
  cfg.behavior_steps = 600;
  const auto res = train_agent(bandit_data(), cfg, 2, kAnchors);
  EXPECT_LT(res.behavior_fit.nll_end, res.behavior_fit.nll_start);

  std::vector<double> critic;
  for (const auto& r : res.log) critic.push_back(r.critic_loss);
  ASSERT_GE(critic.size(), 8u);
  const std::size_t q = critic.size() / 4;
  EXPECT_LT(mean_of(critic, critic.size() - q, critic.size()), mean_of(critic, 0, q));
  for (const auto& r : res.log) {
    EXPECT_GT(r.mean_omega, 0.0);
    EXPECT_LE(r.mean_omega, cfg.guidance.omega_max);
  }
}

TEST(Trainer, CheckpointRoundtripPreservesEvaluation) {
  const auto res = train_agent(bandit_data(), small_config(100), 4, kAnchors);
  const auto path = temp_path("roundtrip.ckpt");
  res.agent.save(path);
  const Agent back = Agent::load(path);
  EXPECT_EQ(back.config, res.agent.config);
  EXPECT_EQ(back.env, "bandit");
  EXPECT_EQ(back.seed, 4u);

  for (const char* variant : {"full", "no_pw", "anchor_bary"}) {
    InferenceConfig ic;
    ic.N = 32;
    ic.variant = parse_variant(variant);
    ic.critic_noise_sigma = 0.5;
    const EvalResult x = evaluate_agent(res.agent, BimodalBandit(), ic, 20, 9);
    const EvalResult y = evaluate_agent(back, BimodalBandit(), ic, 20, 9);
    EXPECT_EQ(x.returns, y.returns) << variant;
    ASSERT_EQ(x.audits.size(), y.audits.size());
    for (std::size_t i = 0; i < x.audits.size(); ++i) {
      EXPECT_EQ(x.audits[i].support_z, y.audits[i].support_z);
      EXPECT_EQ(x.audits[i].collapse_dist, y.audits[i].collapse_dist);
    }
    EXPECT_EQ(x.violation_rate, y.violation_rate);
  }
}

TEST(Trainer, NonFiniteLossAbortsWithLastGoodParameters) {
  OfflineDataset d = bandit_data();
  d.rewards.setConstant(1e300);
  try {
    train_agent(d, small_config(50), 1, kAnchors);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 0u);
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
    EXPECT_TRUE(e.last_good().critics.heads()[0].params().all_finite());
    InferenceConfig ic;
    ic.N = 4;
    EXPECT_NO_THROW(evaluate_agent(e.last_good(), BimodalBandit(), ic, 2, 1));
  }
}

TEST(Trainer, RejectsMismatchedEnv) {
  const auto res = train_agent(bandit_data(), small_config(0), 1, kAnchors);
  InferenceConfig ic;
  ic.N = 2;
  EXPECT_THROW(evaluate_agent(res.agent, PointMaze(), ic, 1, 1), ConfigError);
  TrainConfig bad = small_config(1);
  bad.gamma = 1.0;
  EXPECT_THROW(train_agent(bandit_data(), bad, 1, kAnchors), ConfigError);
}
