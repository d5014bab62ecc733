#include "gem/trainer.hpp"

#include <chrono>
#include <cmath>

#include "gem/checkpoint.hpp"
#include "gem/rng.hpp"

namespace gem {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (K == 0) throw ConfigError("K must be >= 1");
  if (ensemble_size == 0) throw ConfigError("ensemble size must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(expectile_tau > 0.0 && expectile_tau < 1.0)) throw ConfigError("expectile tau must lie in (0, 1)");
  if (!(polyak_tau > 0.0 && polyak_tau <= 1.0)) throw ConfigError("polyak tau must lie in (0, 1]");
  if (!(lr > 0.0) || !(behavior_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (log_every == 0) throw ConfigError("log_every must be >= 1");
  guidance.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"K", c.K},
       {"hidden", c.hidden},
       {"ensemble_size", c.ensemble_size},
       {"gamma", c.gamma},
       {"expectile_tau", c.expectile_tau},
       {"polyak_tau", c.polyak_tau},
       {"lr", c.lr},
       {"beta", c.guidance.beta},
       {"omega_max", c.guidance.omega_max},
       {"alpha_entropy", c.guidance.alpha_entropy},
       {"detach_gamma", c.guidance.detach_gamma},
       {"behavior_steps", c.behavior_steps},
       {"behavior_lr", c.behavior_lr},
       {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.K = j.value("K", d.K);
  c.hidden = j.value("hidden", d.hidden);
  c.ensemble_size = j.value("ensemble_size", d.ensemble_size);
  c.gamma = j.value("gamma", d.gamma);
  c.expectile_tau = j.value("expectile_tau", d.expectile_tau);
  c.polyak_tau = j.value("polyak_tau", d.polyak_tau);
  c.lr = j.value("lr", d.lr);
  c.guidance.beta = j.value("beta", d.guidance.beta);
  c.guidance.omega_max = j.value("omega_max", d.guidance.omega_max);
  c.guidance.alpha_entropy = j.value("alpha_entropy", d.guidance.alpha_entropy);
  c.guidance.detach_gamma = j.value("detach_gamma", d.guidance.detach_gamma);
  c.behavior_steps = j.value("behavior_steps", d.behavior_steps);
  c.behavior_lr = j.value("behavior_lr", d.behavior_lr);
  c.log_every = j.value("log_every", d.log_every);
}

void Agent::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.metadata = {{"env", env},
                   {"seed", seed},
                   {"train_config", config},
                   {"anchors", {{"random_return", anchors.random_return}, {"expert_return", anchors.expert_return}}}};
  actor.save(ckpt, "actor");
  behavior.save(ckpt, "behavior");
  critics.save(ckpt, "critic");
  value.save(ckpt, "value");
  ckpt.save(path);
}

Agent Agent::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  Agent a;
  try {
    a.env = ckpt.metadata.at("env").get<std::string>();
    a.seed = ckpt.metadata.at("seed").get<std::uint64_t>();
    a.config = ckpt.metadata.at("train_config").get<TrainConfig>();
    a.anchors.random_return = ckpt.metadata.at("anchors").at("random_return").get<double>();
    a.anchors.expert_return = ckpt.metadata.at("anchors").at("expert_return").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad format: checkpoint metadata: ") + e.what());
  }
  const AdamConfig adam{a.config.lr};
  a.actor = ActorGmm(Cgmm::load(ckpt, "actor"));
  a.behavior = BehaviorGmm(Cgmm::load(ckpt, "behavior"));
  a.critics = CriticEnsemble::load(ckpt, "critic", adam);
  a.value = ValueNet::load(ckpt, "value", adam);
  return a;
}

TrainResult train_agent(const OfflineDataset& data, const TrainConfig& cfg, std::uint64_t seed,
                        const NormalizationAnchors& anchors, const TrainProgress& progress) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw ConfigError("train: dataset is empty");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t S = data.state_dim(), A = data.action_dim();
  const AdamConfig adam{cfg.lr};

  CgmmSpec gspec;
  gspec.state_dim = S;
  gspec.action_dim = A;
  gspec.K = cfg.K;
  gspec.hidden = cfg.hidden;

  TrainResult res;
  Agent& ag = res.agent;
  ag.env = data.env;
  ag.seed = seed;
  ag.config = cfg;
  ag.anchors = anchors;
  ag.actor = ActorGmm(gspec, derive_seed(seed, "actor"));
  ag.behavior = BehaviorGmm(gspec, derive_seed(seed, "behavior"));
  ag.critics = CriticEnsemble(S, A, cfg.ensemble_size, cfg.hidden, derive_seed(seed, "critic"), adam);
  ag.value = ValueNet(MlpSpec{S, cfg.hidden, 1, Activation::kRelu}, cfg.expectile_tau, derive_seed(seed, "value"), adam);

  PretrainConfig pcfg;
  pcfg.steps = cfg.behavior_steps;
  pcfg.batch_size = cfg.batch_size;
  pcfg.adam.lr = cfg.behavior_lr;
  pcfg.log_every = cfg.log_every;
  res.behavior_fit = pretrain_behavior(ag.behavior, data.states, data.actions, pcfg, seed);

  CgmmOptimizer actor_opt(adam, ag.actor);
  Rng rng(derive_seed(seed, "train_batches"));
  const auto n = static_cast<Eigen::Index>(data.size());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  const auto B = static_cast<Eigen::Index>(cfg.batch_size);
  Matrix bs(static_cast<Eigen::Index>(S), B), ba(static_cast<Eigen::Index>(A), B),
      bn(static_cast<Eigen::Index>(S), B);
  Vector br(B), bd(B);
  Agent last_good = ag;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (Eigen::Index j = 0; j < B; ++j) {
      const Eigen::Index i = pick(rng);
      bs.col(j) = data.states.col(i);
      ba.col(j) = data.actions.col(i);
      bn.col(j) = data.next_states.col(i);
      br[j] = data.rewards[i];
      bd[j] = data.dones[i];
    }
    TrainLogRow row;
    row.step = step;
    try {
      row.value_loss = ag.value.update(bs, ag.critics.q_min_target(bs, ba));
      const Vector v_next = ag.value.evaluate(bn);
      Vector y(B);
      for (Eigen::Index j = 0; j < B; ++j) y[j] = q_target(br[j], bd[j], cfg.gamma, v_next[j]);
      row.critic_loss = ag.critics.update(bs, ba, y);
      ag.critics.polyak_update(cfg.polyak_tau);
      const Vector omega = guidance_weights(advantage(ag.critics, ag.value, bs, ba), cfg.guidance);
      const ActorLoss al = actor_step(ag.actor, actor_opt, bs, ba, omega, cfg.guidance);
      row.actor_loss = al.loss;
      row.entropy = al.entropy;
      row.mean_omega = omega.mean();
      if (!std::isfinite(row.value_loss)) throw NumericalError("value loss is not finite");
    } catch (const NumericalError& e) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what() +
                                 "; returning parameters from the last logged step",
                             last_good, step);
    }
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      res.log.push_back(row);
      last_good = ag;
      if (progress) progress(row);
    }
  }
  ag.actor.freeze();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

EvalResult evaluate_agent(const Agent& agent, const Env& env, const InferenceConfig& cfg, std::size_t episodes,
                          std::uint64_t seed, const DecisionObserver& observe) {
  if (env.state_dim() != agent.actor.spec().state_dim || env.action_dim() != agent.actor.A()) {
    throw ConfigError("agent was trained on '" + agent.env + "', dimensions do not match env '" + env.name() + "'");
  }
  const InferenceEngine engine(agent.actor, agent.behavior, agent.critics, cfg);
  const DecisionFn policy = [&engine, &observe](const Vector& s, const StepContext& ctx, Rng& rng) {
    const StepOutcome o = engine.decide(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())), ctx.t,
                                        ctx.horizon, rng);
    if (observe) observe(s, ctx, o);
    return Decision{o.selection.action, true, o.audit};
  };
  return evaluate_policy(env, policy, episodes, seed, agent.anchors);
}

}  // namespace gem
