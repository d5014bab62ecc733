#include "gem/synthenv.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "gem/error.hpp"
#include "internal/binary_io.hpp"

namespace gem {

namespace {

constexpr char kDataMagic[] = "GEMDATA\n";
constexpr std::size_t kDataMagicLen = 8;

Vector gaussian(std::size_t n, double sigma, Rng& rng) {
  std::normal_distribution<double> d(0.0, sigma);
  Vector v(static_cast<Eigen::Index>(n));
  for (double& x : v) x = d(rng);
  return v;
}

Vector uniform_action(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Vector v(static_cast<Eigen::Index>(n));
  for (double& x : v) x = d(rng);
  return v;
}

Rng episode_rng(std::uint64_t seed, std::string_view stream, std::size_t episode) {
  return Rng(derive_seed(derive_seed(seed, stream), static_cast<std::uint64_t>(episode)));
}

double rollout(const Env& env, const std::function<Vector(const Vector&, Rng&)>& policy, Rng& env_rng,
               Rng& policy_rng) {
  Vector s = env.reset(env_rng);
  double ret = 0.0;
  for (std::size_t t = 0; t < env.horizon(); ++t) {
    const EnvStep st = env.step(s, policy(s, policy_rng));
    ret += st.reward;
    if (st.done) break;
    s = st.next_state;
  }
  return ret;
}

}  // namespace

Vector clip_action(const Vector& a) { return a.cwiseMax(-1.0).cwiseMin(1.0); }

// ---- bandit

Vector BimodalBandit::mode_center(const Vector& s, int mode) {
  if (mode == 0) return Vector{{0.5 + 0.1 * s[0], 0.5 + 0.1 * s[1]}};
  return Vector{{-0.5 + 0.1 * s[1], -0.5 + 0.1 * s[0]}};
}

double BimodalBandit::reward(const Vector& s, const Vector& action) {
  const Vector a = clip_action(action);
  return std::exp(-(a - mode_center(s, 0)).squaredNorm() / kBumpWidth) +
         kSecondHeight * std::exp(-(a - mode_center(s, 1)).squaredNorm() / kBumpWidth);
}

Vector BimodalBandit::reset(Rng& rng) const { return uniform_action(2, rng); }

EnvStep BimodalBandit::step(const Vector& state, const Vector& action) const {
  return {state, reward(state, action), true};
}

int BimodalBandit::sample_behavior_mode(Rng& rng) const {
  return std::bernoulli_distribution(kBehaviorWeightM1)(rng) ? 0 : 1;
}

Vector BimodalBandit::behavior_action(const Vector& state, int mode, Rng& rng) const {
  return clip_action(mode_center(state, mode) + gaussian(2, kBehaviorSigma, rng));
}

nlohmann::json BimodalBandit::behavior_ground_truth() const {
  return {{"type", "gaussian_mixture"},
          {"weights", {kBehaviorWeightM1, 1.0 - kBehaviorWeightM1}},
          {"sigma", kBehaviorSigma},
          {"centers", {"m1 = (0.5 + 0.1 s0, 0.5 + 0.1 s1)", "m2 = (-0.5 + 0.1 s1, -0.5 + 0.1 s0)"}},
          {"clipped_to_box", true}};
}

// ---- maze

Vector PointMaze::goal() { return Vector{{0.0, 0.8}}; }

bool PointMaze::blocked(double x, double y) {
  if (x < -1.0 || x > 1.0 || y < -1.0 || y > 1.0) return true;
  return x >= kBlockXMin && x <= kBlockXMax && y > kBlockYMin && y < kBlockYMax;
}

Vector PointMaze::reset(Rng& rng) const {
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  const double x = jitter(rng);
  const double y = -0.8 + jitter(rng);
  return Vector{{x, y, 0.0, 0.0}};
}

EnvStep PointMaze::step(const Vector& state, const Vector& action) const {
  const Vector a = clip_action(action);
  Vector next(4);
  next[2] = kVelocityLag * state[2] + (1.0 - kVelocityLag) * a[0];
  next[3] = kVelocityLag * state[3] + (1.0 - kVelocityLag) * a[1];
  next[0] = state[0] + kDt * next[2];
  next[1] = state[1] + kDt * next[3];
  if (blocked(next[0], next[1])) {
    next << state[0], state[1], 0.0, 0.0;
  }
  const bool reached = (next.head<2>() - goal()).norm() <= kGoalRadius;
  return {next, reached ? 1.0 : 0.0, reached};
}

Vector PointMaze::controller(const Vector& s, int mode) {
  const double cx = mode == 0 ? kLeftCorridorX : kRightCorridorX;
  Vector target(2);
  if (s[1] >= 0.55) {
    target = goal();
  } else if (std::abs(s[0] - cx) <= 0.15) {
    target << cx, 0.7;
  } else {
    target << cx, s[1];
  }
  return clip_action(3.0 * (target - s.head<2>()));
}

int PointMaze::sample_behavior_mode(Rng& rng) const { return std::bernoulli_distribution(0.5)(rng) ? 0 : 1; }

Vector PointMaze::behavior_action(const Vector& state, int mode, Rng& rng) const {
  return clip_action(controller(state, mode) + gaussian(2, kBehaviorNoise, rng));
}

nlohmann::json PointMaze::behavior_ground_truth() const {
  return {{"type", "scripted_controllers"},
          {"weights", {0.5, 0.5}},
          {"corridor_x", {kLeftCorridorX, kRightCorridorX}},
          {"gain", 3.0},
          {"noise_sigma", kBehaviorNoise},
          {"mode_drawn", "per_episode"}};
}

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "bandit") return std::make_unique<BimodalBandit>();
  if (name == "maze") return std::make_unique<PointMaze>();
  throw ConfigError("unknown env '" + name + "' (expected bandit or maze)");
}

// ---- dataset

void OfflineDataset::validate() const {
  const Eigen::Index n = states.cols();
  if (actions.cols() != n || rewards.size() != n || next_states.cols() != n || dones.size() != n ||
      next_states.rows() != states.rows()) {
    throw ConfigError("dataset arrays disagree in shape");
  }
  if (!states.allFinite() || !next_states.allFinite()) throw ConfigError("dataset has non-finite states");
  if (!rewards.allFinite()) throw ConfigError("dataset has non-finite rewards");
  if (!actions.allFinite() || (actions.size() && (actions.maxCoeff() > 1.0 || actions.minCoeff() < -1.0))) {
    throw ConfigError("dataset action outside the action box");
  }
  for (double d : dones)
    if (d != 0.0 && d != 1.0) throw ConfigError("dataset done flags must be 0 or 1");
}

void OfflineDataset::save(const std::filesystem::path& path) const {
  validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(kDataMagic, kDataMagicLen);
  out << "format_version " << kFormatVersion << "\n"
      << "dims " << size() << " " << state_dim() << " " << action_dim() << "\n";
  detail::write_f64_le(out, {states.data(), static_cast<std::size_t>(states.size())});
  detail::write_f64_le(out, {actions.data(), static_cast<std::size_t>(actions.size())});
  detail::write_f64_le(out, {rewards.data(), static_cast<std::size_t>(rewards.size())});
  detail::write_f64_le(out, {next_states.data(), static_cast<std::size_t>(next_states.size())});
  detail::write_f64_le(out, {dones.data(), static_cast<std::size_t>(dones.size())});
  if (!out) throw FormatError("write failed for '" + path.string() + "'");

  nlohmann::json side = metadata;
  side["env"] = env;
  side["seed"] = seed;
  side["size"] = size();
  side["state_dim"] = state_dim();
  side["action_dim"] = action_dim();
  std::ofstream js(path.string() + ".json", std::ios::trunc);
  js << side.dump(2) << "\n";
  if (!js) throw FormatError("write failed for '" + path.string() + ".json'");
}

OfflineDataset OfflineDataset::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset '" + path.string() + "'");
  char magic[kDataMagicLen];
  in.read(magic, kDataMagicLen);
  if (in.gcount() != static_cast<std::streamsize>(kDataMagicLen) ||
      std::string_view(magic, kDataMagicLen) != std::string_view(kDataMagic, kDataMagicLen)) {
    throw FormatError("bad format: '" + path.string() + "' is not a dataset file");
  }
  std::string line;
  std::string tag;
  long version = -1;
  if (!std::getline(in, line) || !(std::istringstream(line) >> tag >> version) || tag != "format_version") {
    throw FormatError("bad format: missing dataset format_version");
  }
  if (version != kFormatVersion) {
    throw FormatError("dataset version mismatch: file has " + std::to_string(version) + ", reader supports " +
                      std::to_string(kFormatVersion));
  }
  long n = -1, S = -1, A = -1;
  if (!std::getline(in, line) || !(std::istringstream(line) >> tag >> n >> S >> A) || tag != "dims" || n < 0 ||
      S < 1 || A < 1) {
    throw FormatError("bad format: missing dataset dims");
  }
  OfflineDataset d;
  d.states.resize(S, n);
  d.actions.resize(A, n);
  d.rewards.resize(n);
  d.next_states.resize(S, n);
  d.dones.resize(n);
  auto read = [&](double* p, Eigen::Index count) {
    detail::read_f64_le(in, {p, static_cast<std::size_t>(count)});
    if (in.gcount() != static_cast<std::streamsize>(count * static_cast<Eigen::Index>(sizeof(double)))) {
      throw FormatError("dataset truncated: '" + path.string() + "'");
    }
  };
  read(d.states.data(), d.states.size());
  read(d.actions.data(), d.actions.size());
  read(d.rewards.data(), d.rewards.size());
  read(d.next_states.data(), d.next_states.size());
  read(d.dones.data(), d.dones.size());

  std::ifstream js(path.string() + ".json");
  if (!js) throw FormatError("dataset sidecar '" + path.string() + ".json' is missing");
  try {
    d.metadata = nlohmann::json::parse(js);
    d.env = d.metadata.at("env").get<std::string>();
    d.seed = d.metadata.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad format: unreadable dataset sidecar: ") + e.what());
  }
  d.validate();
  return d;
}

// ---- anchors and generation

double NormalizationAnchors::normalize(double raw_return) const {
  if (!(expert_return > random_return)) throw ConfigError("normalization anchors: expert must beat random");
  return (raw_return - random_return) / (expert_return - random_return) * 100.0;
}

NormalizationAnchors compute_anchors(const Env& env, std::uint64_t seed, std::size_t random_episodes,
                                     std::size_t expert_episodes) {
  if (random_episodes == 0 || expert_episodes == 0) throw ConfigError("anchors need at least one episode");
  NormalizationAnchors out;
  const std::size_t A = env.action_dim();
  for (std::size_t e = 0; e < random_episodes; ++e) {
    Rng er = episode_rng(seed, "anchor_random_env", e), pr = episode_rng(seed, "anchor_random_policy", e);
    out.random_return += rollout(env, [A](const Vector&, Rng& r) { return uniform_action(A, r); }, er, pr);
  }
  for (std::size_t e = 0; e < expert_episodes; ++e) {
    Rng er = episode_rng(seed, "anchor_expert_env", e), pr = episode_rng(seed, "anchor_expert_policy", e);
    out.expert_return += rollout(env, [&env](const Vector& s, Rng&) { return env.expert_action(s); }, er, pr);
  }
  out.random_return /= static_cast<double>(random_episodes);
  out.expert_return /= static_cast<double>(expert_episodes);
  if (!(out.expert_return > out.random_return)) {
    throw ConfigError("env '" + env.name() + "': expert return " + std::to_string(out.expert_return) +
                      " does not exceed random return " + std::to_string(out.random_return));
  }
  return out;
}

NormalizationAnchors standard_anchors(const Env& env) {
  return compute_anchors(env, derive_seed(0, "anchors:" + env.name()));
}

OfflineDataset generate_dataset(const Env& env, std::size_t n_transitions, std::uint64_t seed,
                                const NormalizationAnchors* anchors) {
  if (n_transitions == 0) throw ConfigError("generate_dataset: n_transitions must be >= 1");
  const auto n = static_cast<Eigen::Index>(n_transitions);
  const auto S = static_cast<Eigen::Index>(env.state_dim());
  const auto A = static_cast<Eigen::Index>(env.action_dim());
  OfflineDataset d;
  d.env = env.name();
  d.seed = seed;
  d.states.resize(S, n);
  d.actions.resize(A, n);
  d.rewards.resize(n);
  d.next_states.resize(S, n);
  d.dones.resize(n);

  Eigen::Index i = 0;
  std::size_t episodes = 0;
  std::vector<std::size_t> mode_counts(2, 0);
  while (i < n) {
    Rng rng = episode_rng(seed, "dataset", episodes++);
    const int mode = env.sample_behavior_mode(rng);
    ++mode_counts[static_cast<std::size_t>(mode)];
    Vector s = env.reset(rng);
    for (std::size_t t = 0; t < env.horizon() && i < n; ++t, ++i) {
      const Vector a = env.behavior_action(s, mode, rng);
      const EnvStep st = env.step(s, a);
      d.states.col(i) = s;
      d.actions.col(i) = a;
      d.rewards[i] = st.reward;
      d.next_states.col(i) = st.next_state;
      d.dones[i] = st.done ? 1.0 : 0.0;
      if (st.done) {
        ++i;
        break;
      }
      s = st.next_state;
    }
  }
  d.metadata["behavior"] = env.behavior_ground_truth();
  d.metadata["behavior"]["episode_mode_counts"] = mode_counts;
  d.metadata["episodes"] = episodes;
  if (anchors) {
    d.metadata["anchors"] = {{"random_return", anchors->random_return}, {"expert_return", anchors->expert_return}};
  }
  return d;
}

// ---- evaluation

EvalResult evaluate_policy(const Env& env, const DecisionFn& decide, std::size_t episodes, std::uint64_t seed,
                           const NormalizationAnchors& anchors) {
  if (episodes == 0) throw ConfigError("evaluate_policy: episodes must be >= 1");
  EvalResult res;
  double support_sum = 0.0, collapse_sum = 0.0;
  std::size_t violations = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng env_rng = episode_rng(seed, "eval_env", e);
    Rng policy_rng = episode_rng(seed, "eval_policy", e);
    Vector s = env.reset(env_rng);
    double ret = 0.0;
    for (std::size_t t = 0; t < env.horizon(); ++t) {
      const Decision d = decide(s, StepContext{t, env.horizon()}, policy_rng);
      ++res.decisions;
      if (d.audited) {
        res.audits.push_back(d.audit);
        support_sum += d.audit.support_z;
        collapse_sum += d.audit.collapse_dist;
        violations += d.audit.violation ? 1 : 0;
      }
      const EnvStep st = env.step(s, d.action);
      ret += st.reward;
      if (st.done) break;
      s = st.next_state;
    }
    res.returns.push_back(ret);
    res.raw_return_mean += ret;
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.raw_return_mean /= static_cast<double>(episodes);
  res.normalized_score = anchors.normalize(res.raw_return_mean);
  if (!res.audits.empty()) {
    const auto m = static_cast<double>(res.audits.size());
    res.violation_rate = static_cast<double>(violations) / m;
    res.mean_support_z = support_sum / m;
    res.mean_collapse_dist = collapse_sum / m;
  }
  return res;
}

OracleModeValues oracle_mode_values(const BimodalBandit& env, const Vector& state) {
  (void)env;
  const Vector m1 = BimodalBandit::mode_center(state, 0);
  const Vector m2 = BimodalBandit::mode_center(state, 1);
  OracleModeValues out;
  out.per_mode.assign(2, {Vector::Zero(2), -std::numeric_limits<double>::infinity()});
  Vector a(2);
  for (int i = 0; i <= 200; ++i) {
    for (int j = 0; j <= 200; ++j) {
      a << -1.0 + 0.01 * i, -1.0 + 0.01 * j;
      const double r = BimodalBandit::reward(state, a);
      const std::size_t basin = (a - m1).squaredNorm() <= (a - m2).squaredNorm() ? 0 : 1;
      if (r > out.per_mode[basin].value) out.per_mode[basin] = {a, r};
    }
  }
  out.best = out.per_mode[0].value >= out.per_mode[1].value ? out.per_mode[0] : out.per_mode[1];
  return out;
}

}  // namespace gem
