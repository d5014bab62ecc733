#include "gem/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gem/error.hpp"

namespace gem {

namespace {

template <class E>
struct Names {
  E value;
  const char* name;
};

constexpr Names<Variant> kVariants[] = {{Variant::kFull, "full"},
                                        {Variant::kNoPw, "no_pw"},
                                        {Variant::kNoLcb, "no_lcb"},
                                        {Variant::kNoAnchor, "no_anchor"},
                                        {Variant::kAnchorBary, "anchor_bary"},
                                        {Variant::kUnimodalActorCands, "unimodal_actor_cands"},
                                        {Variant::kBehaviorOnlyCands, "behavior_only_cands"}};
constexpr Names<Schedule> kSchedules[] = {{Schedule::kCosine, "cosine"}, {Schedule::kConstant, "constant"}};
constexpr Names<Source> kSources[] = {{Source::kActor, "actor"}, {Source::kBehavior, "behavior"}};
constexpr Names<SupportMode> kModes[] = {{SupportMode::kZscore, "zscore"}, {SupportMode::kRaw, "raw"}};

template <class E, std::size_t N>
std::string name_of(const Names<E> (&table)[N], E v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  throw ConfigError("unnamed enum value");
}

template <class E, std::size_t N>
E parse_name(const Names<E> (&table)[N], const std::string& s, const char* what) {
  for (const auto& e : table)
    if (s == e.name) return e.value;
  std::string options;
  for (const auto& e : table) options += std::string(options.empty() ? "" : ", ") + e.name;
  throw ConfigError("unknown " + std::string(what) + " '" + s + "' (expected one of: " + options + ")");
}

}  // namespace

std::string to_string(Schedule v) { return name_of(kSchedules, v); }
std::string to_string(Source v) { return name_of(kSources, v); }
std::string to_string(SupportMode v) { return name_of(kModes, v); }
std::string to_string(Variant v) { return name_of(kVariants, v); }
Schedule parse_schedule(const std::string& s) { return parse_name(kSchedules, s, "schedule"); }
Source parse_source(const std::string& s) { return parse_name(kSources, s, "source"); }
SupportMode parse_support_mode(const std::string& s) { return parse_name(kModes, s, "support mode"); }
Variant parse_variant(const std::string& s) { return parse_name(kVariants, s, "variant"); }

void InferenceConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
  if (!std::isfinite(wp_end)) throw ConfigError("wp_end must be finite");
  if (k_smooth < 1) throw ConfigError("k_smooth must be >= 1");
  if (!(critic_noise_sigma >= 0.0)) throw ConfigError("critic noise sigma must be >= 0");
  if (set_size() == 0) throw ConfigError("no_anchor with N = 0 leaves an empty candidate set");
}

void to_json(nlohmann::json& j, const InferenceConfig& c) {
  j = {{"N", c.N},
       {"lambda", c.lambda},
       {"wp_end", c.wp_end},
       {"schedule", to_string(c.schedule)},
       {"k_smooth", c.k_smooth},
       {"source", to_string(c.source)},
       {"support_mode", to_string(c.support_mode)},
       {"variant", to_string(c.variant)},
       {"critic_noise_sigma", c.critic_noise_sigma}};
}

void from_json(const nlohmann::json& j, InferenceConfig& c) {
  InferenceConfig d;
  c.N = j.value("N", d.N);
  c.lambda = j.value("lambda", d.lambda);
  c.wp_end = j.value("wp_end", d.wp_end);
  c.schedule = parse_schedule(j.value("schedule", to_string(d.schedule)));
  c.k_smooth = j.value("k_smooth", d.k_smooth);
  c.source = parse_source(j.value("source", to_string(d.source)));
  c.support_mode = parse_support_mode(j.value("support_mode", to_string(d.support_mode)));
  c.variant = parse_variant(j.value("variant", to_string(d.variant)));
  c.critic_noise_sigma = j.value("critic_noise_sigma", d.critic_noise_sigma);
}

double wp_schedule(std::size_t t, std::size_t T, double wp_end) {
  if (t > T) throw ConfigError("wp_schedule: t must not exceed T");
  if (T == 0) return 1.0;
  const double frac = static_cast<double>(t) / static_cast<double>(T);
  return wp_end + 0.5 * (1.0 - wp_end) * (1.0 + std::cos(std::numbers::pi * frac));
}

double support_weight(const InferenceConfig& cfg, std::size_t t, std::size_t T) {
  return cfg.schedule == Schedule::kConstant ? cfg.wp_end : wp_schedule(t, T, cfg.wp_end);
}

CandidateSet build_candidates(const ActorGmm& actor, const BehaviorGmm& behavior, std::span<const double> s,
                              const InferenceConfig& cfg, Rng& rng) {
  CandidateSet set;
  set.has_anchor = cfg.has_anchor();
  set.source = cfg.source;
  if (cfg.variant == Variant::kBehaviorOnlyCands) set.source = Source::kBehavior;
  if (cfg.variant == Variant::kUnimodalActorCands) set.source = Source::kActor;

  const GmmHeads ah = actor.heads(s);
  const auto A = static_cast<Eigen::Index>(actor.A());
  set.actions.resize(A, static_cast<Eigen::Index>(cfg.set_size()));
  if (set.has_anchor) set.actions.col(0) = cfg.variant == Variant::kAnchorBary ? barycenter(ah) : anchor(ah);

  if (cfg.N > 0) {
    Matrix draws;
    if (cfg.variant == Variant::kUnimodalActorCands) {
      draws = sample_component(ah, top_component(ah), rng, cfg.N);
    } else if (set.source == Source::kBehavior) {
      draws = sample(behavior.heads(s), rng, cfg.N);
    } else {
      draws = sample(ah, rng, cfg.N);
    }
    set.actions.rightCols(static_cast<Eigen::Index>(cfg.N)) = draws;
  }
  set.actions = set.actions.cwiseMax(-1.0).cwiseMin(1.0);
  return set;
}

Vector zscore_support(const Vector& l) {
  if (l.size() == 0) throw ConfigError("zscore_support: empty candidate vector");
  const double mean = l.mean();
  const double var = (l.array() - mean).square().mean();
  return (l.array() - mean) / std::max(std::sqrt(var), 1e-6);
}

std::vector<ScoredCandidate> rank_candidates(const CandidateSet& set, const Matrix& q_heads, const Vector& support_log,
                                             double w_p, const InferenceConfig& cfg) {
  const Eigen::Index n = set.actions.cols();
  if (q_heads.cols() != n || support_log.size() != n || n == 0) {
    throw ConfigError("rank_candidates: candidate, critic and support sizes disagree");
  }
  const double lambda = cfg.variant == Variant::kNoLcb ? 0.0 : cfg.lambda;
  const Vector z = zscore_support(support_log);
  std::vector<ScoredCandidate> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    ScoredCandidate& c = out[static_cast<std::size_t>(i)];
    const Vector q = q_heads.col(i);
    const EnsembleStats st = ensemble_stats(std::span<const double>(q.data(), q.size()), lambda);
    c.action = set.actions.col(i);
    c.q_mean = st.mean;
    c.q_std = st.std_pop;
    c.lcb = st.lcb;
    c.support_log = support_log[i];
    c.support_z = z[i];
    c.support_norm = cfg.support_mode == SupportMode::kZscore ? z[i] : support_log[i];
    c.score = cfg.variant == Variant::kNoPw ? c.lcb : c.lcb + w_p * c.support_norm;
    c.is_anchor = set.has_anchor && i == 0;
    c.index = static_cast<std::size_t>(i);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredCandidate& a, const ScoredCandidate& b) { return a.score > b.score; });
  return out;
}

std::vector<ScoredCandidate> score_candidates(const CandidateSet& set, const CriticEnsemble& critics,
                                              const BehaviorGmm& behavior, std::span<const double> s, double w_p,
                                              const InferenceConfig& cfg, Rng* noise_rng) {
  const Eigen::Index n = set.actions.cols();
  const Eigen::Map<const Vector> sv(s.data(), static_cast<Eigen::Index>(s.size()));
  Matrix q = critics.evaluate(sv.replicate(1, n), set.actions);
  if (cfg.critic_noise_sigma > 0.0) {
    if (!noise_rng) throw ConfigError("critic noise requested without a noise generator");
    std::normal_distribution<double> noise(0.0, cfg.critic_noise_sigma);
    for (Eigen::Index i = 0; i < n; ++i) q(0, i) += noise(*noise_rng);
  }
  const Vector support_log = log_prob_batch(behavior.heads(s), set.actions);
  return rank_candidates(set, q, support_log, w_p, cfg);
}

Selection select(const std::vector<ScoredCandidate>& ranked, std::size_t k_smooth) {
  if (ranked.empty()) throw ConfigError("select: empty candidate set");
  Selection sel;
  sel.k = std::min(std::max<std::size_t>(k_smooth, 1), ranked.size());
  sel.top1 = ranked.front().action;
  sel.action = Vector::Zero(sel.top1.size());
  for (std::size_t i = 0; i < sel.k; ++i) sel.action += ranked[i].action;
  sel.action /= static_cast<double>(sel.k);
  return sel;
}

InferenceEngine::InferenceEngine(const ActorGmm& actor, const BehaviorGmm& behavior, const CriticEnsemble& critics,
                                 InferenceConfig cfg)
    : actor_(actor), behavior_(behavior), critics_(critics), cfg_(cfg) {
  cfg_.validate();
  if (actor.A() != behavior.A() || actor.A() != critics.action_dim()) {
    throw ConfigError("actor, behavior and critics disagree on the action dimension");
  }
}

StepOutcome InferenceEngine::decide(std::span<const double> s, std::size_t t, std::size_t T, Rng& rng) const {
  const CandidateSet set = build_candidates(actor_, behavior_, s, cfg_, rng);
  // Drawn unconditionally so stressed and clean runs see the same candidates.
  Rng noise_rng(rng());
  const auto ranked = score_candidates(set, critics_, behavior_, s, support_weight(cfg_, t, T), cfg_, &noise_rng);
  StepOutcome out;
  out.selection = select(ranked, cfg_.k_smooth);
  out.winner = ranked.front();
  out.candidates = set.size();
  out.candidate_digest = fnv1a(std::string_view(reinterpret_cast<const char*>(set.actions.data()),
                                                static_cast<std::size_t>(set.actions.size()) * sizeof(double)));
  out.audit.support_z = out.winner.support_z;
  out.audit.violation = violation_flag(out.winner.support_z);
  out.audit.collapse_dist = collapse_dist(out.selection.top1, behavior_, s);
  return out;
}

}  // namespace gem
