#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gem/actor_em.hpp"
#include "gem/behavior_mle.hpp"
#include "gem/cgmm.hpp"
#include "gem/error.hpp"
#include "gem/inference.hpp"
#include "gem/synthenv.hpp"
#include "gem/valuecritic.hpp"

namespace gem {

struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 256;
  std::size_t K = 4;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t ensemble_size = 8;
  double gamma = 0.99;
  double expectile_tau = 0.7;
  double polyak_tau = 0.005;
  double lr = 3e-4;
  GuidanceConfig guidance;
  std::size_t behavior_steps = 5000;
  double behavior_lr = 1e-3;
  std::size_t log_every = 100;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainLogRow {
  std::size_t step = 0;
  double critic_loss = 0.0;
  double value_loss = 0.0;
  double actor_loss = 0.0;
  double entropy = 0.0;
  double mean_omega = 0.0;
};

/// Everything a trained agent needs at evaluation time.
struct Agent {
  std::string env;
  std::uint64_t seed = 0;
  TrainConfig config;
  ActorGmm actor;
  BehaviorGmm behavior;
  CriticEnsemble critics;
  ValueNet value;
  NormalizationAnchors anchors;

  void save(const std::filesystem::path& path) const;
  static Agent load(const std::filesystem::path& path);
};

struct TrainResult {
  Agent agent;
  PretrainResult behavior_fit;
  std::vector<TrainLogRow> log;
  double seconds = 0.0;
};

/// Raised when a loss turns non-finite. Carries the parameters saved at the
/// last logged step.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, Agent last_good, std::size_t step)
      : NumericalError(what), last_good_(std::move(last_good)), step_(step) {}
  const Agent& last_good() const { return last_good_; }
  std::size_t step() const { return step_; }

 private:
  Agent last_good_;
  std::size_t step_;
};

using TrainProgress = std::function<void(const TrainLogRow&)>;

/// Behavior MLE (then frozen), followed by the value / critic / Polyak /
/// guided-actor loop. The actor is frozen on return.
TrainResult train_agent(const OfflineDataset& data, const TrainConfig& cfg, std::uint64_t seed,
                        const NormalizationAnchors& anchors, const TrainProgress& progress = nullptr);

using DecisionObserver = std::function<void(const Vector& state, const StepContext& ctx, const StepOutcome& out)>;

/// Runs the inference engine built from `agent` on `env`. Every decision is
/// audited.
EvalResult evaluate_agent(const Agent& agent, const Env& env, const InferenceConfig& cfg, std::size_t episodes,
                          std::uint64_t seed, const DecisionObserver& observe = nullptr);

}  // namespace gem
