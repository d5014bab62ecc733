#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gem/audits.hpp"
#include "gem/cgmm.hpp"
#include "gem/rng.hpp"
#include "gem/valuecritic.hpp"

namespace gem {

enum class Schedule { kCosine, kConstant };
enum class Source { kActor, kBehavior };
enum class SupportMode { kZscore, kRaw };
enum class Variant { kFull, kNoPw, kNoLcb, kNoAnchor, kAnchorBary, kUnimodalActorCands, kBehaviorOnlyCands };

std::string to_string(Schedule v);
std::string to_string(Source v);
std::string to_string(SupportMode v);
std::string to_string(Variant v);
/// Throw ConfigError on unknown names.
Schedule parse_schedule(const std::string& s);
Source parse_source(const std::string& s);
SupportMode parse_support_mode(const std::string& s);
Variant parse_variant(const std::string& s);

struct InferenceConfig {
  std::size_t N = 1024;
  double lambda = 1.0;
  double wp_end = 0.4;
  Schedule schedule = Schedule::kCosine;
  std::size_t k_smooth = 1;
  Source source = Source::kActor;
  SupportMode support_mode = SupportMode::kZscore;
  Variant variant = Variant::kFull;
  // Eval-time stress: zero-mean Gaussian noise added to critic head 0.
  double critic_noise_sigma = 0.0;

  void validate() const;
  bool has_anchor() const { return variant != Variant::kNoAnchor; }
  std::size_t set_size() const { return N + (has_anchor() ? 1 : 0); }
  bool operator==(const InferenceConfig&) const = default;
};

void to_json(nlohmann::json& j, const InferenceConfig& c);
void from_json(const nlohmann::json& j, InferenceConfig& c);

/// wp_end + (1 - wp_end) * (1 + cos(pi t / T)) / 2 for 0 <= t <= T.
double wp_schedule(std::size_t t, std::size_t T, double wp_end);
double support_weight(const InferenceConfig& cfg, std::size_t t, std::size_t T);

/// Candidate actions as columns. When `has_anchor`, column 0 is the anchor.
struct CandidateSet {
  Matrix actions;
  bool has_anchor = false;
  Source source = Source::kActor;

  std::size_t size() const { return static_cast<std::size_t>(actions.cols()); }
};

CandidateSet build_candidates(const ActorGmm& actor, const BehaviorGmm& behavior, std::span<const double> s,
                              const InferenceConfig& cfg, Rng& rng);

/// (l - mean(l)) / max(pop_std(l), 1e-6)
Vector zscore_support(const Vector& log_liks);

struct ScoredCandidate {
  Vector action;
  double lcb = 0.0;
  double q_mean = 0.0;
  double q_std = 0.0;
  double support_log = 0.0;
  double support_norm = 0.0;
  double support_z = 0.0;
  double score = 0.0;
  bool is_anchor = false;
  std::size_t index = 0;
};

/// Ranks candidates from their per-head Q values (M x n) and behavior
/// log-densities. Descending score; ties keep insertion order, so an anchor
/// in column 0 wins them.
std::vector<ScoredCandidate> rank_candidates(const CandidateSet& set, const Matrix& q_heads,
                                             const Vector& support_log, double w_p, const InferenceConfig& cfg);

/// Support is always the frozen behavior density; only a BehaviorGmm is
/// accepted. `noise_rng` is required when cfg.critic_noise_sigma > 0.
std::vector<ScoredCandidate> score_candidates(const CandidateSet& set, const CriticEnsemble& critics,
                                              const BehaviorGmm& behavior, std::span<const double> s, double w_p,
                                              const InferenceConfig& cfg, Rng* noise_rng = nullptr);

struct Selection {
  Vector action;
  Vector top1;
  std::size_t k = 1;
};

/// Mean of the top min(k_smooth, |C|) actions, plus the unsmoothed winner.
Selection select(const std::vector<ScoredCandidate>& ranked, std::size_t k_smooth);

struct StepOutcome {
  Selection selection;
  ScoredCandidate winner;
  AuditRecord audit;
  std::size_t candidates = 0;
  /// FNV-1a over the candidate matrix bytes; compares sets across runs.
  std::uint64_t candidate_digest = 0;
};

/// One decision: candidates, scoring, selection and the step's audit record.
class InferenceEngine {
 public:
  InferenceEngine(const ActorGmm& actor, const BehaviorGmm& behavior, const CriticEnsemble& critics,
                  InferenceConfig cfg);

  const InferenceConfig& config() const { return cfg_; }

  StepOutcome decide(std::span<const double> s, std::size_t t, std::size_t T, Rng& rng) const;

 private:
  const ActorGmm& actor_;
  const BehaviorGmm& behavior_;
  const CriticEnsemble& critics_;
  InferenceConfig cfg_;
};

}  // namespace gem
