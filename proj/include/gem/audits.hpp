#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gem/cgmm.hpp"
#include "gem/rng.hpp"

namespace gem {

constexpr double kViolationThreshold = -2.0;

/// Per-decision audit fields for the executed step.
struct AuditRecord {
  double support_z = 0.0;
  bool violation = false;
  double collapse_dist = 0.0;
};

/// z < -2 (strict).
bool violation_flag(double support_z);

/// min_k || a - mu_k(s) || over the behavior mixture's component means.
double collapse_dist(const Vector& action, const GmmHeads& behavior_heads);
double collapse_dist(const Vector& action, const BehaviorGmm& behavior, std::span<const double> s);

struct NllGap {
  double nll_gmm = 0.0;
  double nll_top1 = 0.0;
  double gap = 0.0;
};

/// Dataset means of -log p_gmm(a|s) and of the Gaussian NLL of the
/// highest-gated component alone (its gating weight is not included).
NllGap nll_gap(const Cgmm& gmm, const Matrix& states, const Matrix& actions);

struct ExtremeValueRow {
  std::size_t N = 0;
  double empirical_mean = 0.0;
  double std_error = 0.0;
  double bound = 0.0;
};

/// Monte-Carlo E[max] of N+1 Gaussian draws with standard deviation sigma,
/// equicorrelated with coefficient rho, next to sigma * sqrt(2 log(N+1)).
std::vector<ExtremeValueRow> extreme_value_sim(double sigma, const std::vector<std::size_t>& budgets,
                                               std::size_t reps, Rng& rng, double rho = 0.0);

double extreme_value_bound(double sigma, std::size_t N);

}  // namespace gem
