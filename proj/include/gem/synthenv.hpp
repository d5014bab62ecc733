#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gem/audits.hpp"
#include "gem/mlp.hpp"
#include "gem/rng.hpp"

namespace gem {

struct EnvStep {
  Vector next_state;
  double reward = 0.0;
  bool done = false;
};

/// Continuous-action environment with a Markov state vector, actions in
/// [-1,1]^A, and a known multimodal data-collecting policy.
class Env {
 public:
  virtual ~Env() = default;

  virtual std::string name() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual std::size_t horizon() const = 0;

  virtual Vector reset(Rng& rng) const = 0;
  /// Out-of-box actions are clipped before use.
  virtual EnvStep step(const Vector& state, const Vector& action) const = 0;

  /// Behavior modes are drawn once per episode.
  virtual int sample_behavior_mode(Rng& rng) const = 0;
  virtual Vector behavior_action(const Vector& state, int mode, Rng& rng) const = 0;
  virtual Vector expert_action(const Vector& state) const = 0;
  virtual nlohmann::json behavior_ground_truth() const = 0;
};

Vector clip_action(const Vector& a);

/// Horizon-1 task with two reward bumps per state: height 1.0 at m1(s) and
/// 0.8 at m2(s), width 0.02 in squared distance.
class BimodalBandit : public Env {
 public:
  static constexpr double kBehaviorSigma = 0.1;
  static constexpr double kBehaviorWeightM1 = 0.55;
  static constexpr double kBumpWidth = 0.02;
  static constexpr double kSecondHeight = 0.8;

  std::string name() const override { return "bandit"; }
  std::size_t state_dim() const override { return 2; }
  std::size_t action_dim() const override { return 2; }
  std::size_t horizon() const override { return 1; }

  Vector reset(Rng& rng) const override;
  EnvStep step(const Vector& state, const Vector& action) const override;
  int sample_behavior_mode(Rng& rng) const override;
  Vector behavior_action(const Vector& state, int mode, Rng& rng) const override;
  Vector expert_action(const Vector& state) const override { return mode_center(state, 0); }
  nlohmann::json behavior_ground_truth() const override;

  static Vector mode_center(const Vector& state, int mode);
  static double reward(const Vector& state, const Vector& action);
};

/// Point mass in [-1,1]^2 with a central block. Start below the block, goal
/// above it; the left corridor is shorter than the right one.
class PointMaze : public Env {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kVelocityLag = 0.8;
  static constexpr double kGoalRadius = 0.15;
  static constexpr double kBehaviorNoise = 0.1;
  static constexpr double kBlockXMin = -0.3, kBlockXMax = 0.6, kBlockYMin = -0.5, kBlockYMax = 0.5;
  static constexpr double kLeftCorridorX = -0.65, kRightCorridorX = 0.8;

  std::string name() const override { return "maze"; }
  std::size_t state_dim() const override { return 4; }
  std::size_t action_dim() const override { return 2; }
  std::size_t horizon() const override { return 100; }

  Vector reset(Rng& rng) const override;
  EnvStep step(const Vector& state, const Vector& action) const override;
  int sample_behavior_mode(Rng& rng) const override;
  Vector behavior_action(const Vector& state, int mode, Rng& rng) const override;
  Vector expert_action(const Vector& state) const override { return controller(state, 0); }
  nlohmann::json behavior_ground_truth() const override;

  /// Noise-free waypoint controller; mode 0 follows the left corridor.
  static Vector controller(const Vector& state, int mode);
  static bool blocked(double x, double y);
  static Vector goal();
};

std::unique_ptr<Env> make_env(const std::string& name);

struct OfflineDataset {
  static constexpr int kFormatVersion = 1;

  std::string env;
  std::uint64_t seed = 0;
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  Vector dones;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const { return static_cast<std::size_t>(states.cols()); }
  std::size_t state_dim() const { return static_cast<std::size_t>(states.rows()); }
  std::size_t action_dim() const { return static_cast<std::size_t>(actions.rows()); }

  /// Throws ConfigError if shapes disagree, an action leaves the box or a
  /// reward is not finite.
  void validate() const;

  /// Writes `path` (binary arrays) and `path` + ".json" (metadata sidecar).
  void save(const std::filesystem::path& path) const;
  static OfflineDataset load(const std::filesystem::path& path);
};

struct NormalizationAnchors {
  double random_return = 0.0;
  double expert_return = 0.0;

  double normalize(double raw_return) const;
};

/// Random-uniform and scripted-expert mean returns. Throws ConfigError if the
/// expert does not beat the random policy.
NormalizationAnchors compute_anchors(const Env& env, std::uint64_t seed, std::size_t random_episodes = 10000,
                                     std::size_t expert_episodes = 1000);

/// Anchors from a fixed per-env stream, so every tool reports scores on the
/// same scale.
NormalizationAnchors standard_anchors(const Env& env);

OfflineDataset generate_dataset(const Env& env, std::size_t n_transitions, std::uint64_t seed,
                                const NormalizationAnchors* anchors = nullptr);

struct StepContext {
  std::size_t t = 0;
  std::size_t horizon = 1;
};

struct Decision {
  Vector action;
  bool audited = false;
  AuditRecord audit;
};

using DecisionFn = std::function<Decision(const Vector& state, const StepContext& ctx, Rng& rng)>;

struct EvalResult {
  double raw_return_mean = 0.0;
  double normalized_score = 0.0;
  std::vector<double> returns;
  std::vector<AuditRecord> audits;
  double violation_rate = 0.0;
  double mean_collapse_dist = 0.0;
  double mean_support_z = 0.0;
  std::size_t decisions = 0;
  double seconds = 0.0;
};

/// Runs `episodes` rollouts; episode e uses streams derived from (seed, e).
EvalResult evaluate_policy(const Env& env, const DecisionFn& decide, std::size_t episodes, std::uint64_t seed,
                           const NormalizationAnchors& anchors);

struct ModeValue {
  Vector action;
  double value = 0.0;
};

struct OracleModeValues {
  ModeValue best;
  std::vector<ModeValue> per_mode;
};

/// Brute force over a 201 x 201 action grid; each grid point belongs to the
/// basin of its nearer mode center.
OracleModeValues oracle_mode_values(const BimodalBandit& env, const Vector& state);

}  // namespace gem
