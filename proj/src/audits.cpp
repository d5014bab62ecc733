#include "gem/audits.hpp"

#include <cmath>
#include <limits>

#include "gem/error.hpp"

namespace gem {

bool violation_flag(double support_z) { return support_z < kViolationThreshold; }

double collapse_dist(const Vector& action, const GmmHeads& behavior_heads) {
  return (behavior_heads.mu.colwise() - action).colwise().norm().minCoeff();
}

double collapse_dist(const Vector& action, const BehaviorGmm& behavior, std::span<const double> s) {
  return collapse_dist(action, behavior.heads(s));
}

NllGap nll_gap(const Cgmm& gmm, const Matrix& states, const Matrix& actions) {
  const Eigen::Index n = states.cols();
  if (n == 0 || actions.cols() != n) throw ConfigError("nll_gap: empty or mismatched dataset");
  const CgmmBatch batch = gmm.forward(states);
  NllGap out;
  for (Eigen::Index b = 0; b < n; ++b) {
    const GmmHeads h = gmm.heads_at(batch, b);
    // u_k minus log w_k is the component's own Gaussian log-density
    const Vector u = component_log_joints(h, actions.col(b));
    const auto k = static_cast<Eigen::Index>(top_component(h));
    out.nll_gmm -= logsumexp(u);
    out.nll_top1 -= u[k] - h.log_weights()[k];
  }
  out.nll_gmm /= static_cast<double>(n);
  out.nll_top1 /= static_cast<double>(n);
  out.gap = out.nll_top1 - out.nll_gmm;
  return out;
}

double extreme_value_bound(double sigma, std::size_t N) {
  return sigma * std::sqrt(2.0 * std::log(static_cast<double>(N + 1)));
}

std::vector<ExtremeValueRow> extreme_value_sim(double sigma, const std::vector<std::size_t>& budgets,
                                               std::size_t reps, Rng& rng, double rho) {
  if (reps < 1000) throw ConfigError("extreme_value_sim: reps must be >= 1000");
  if (!(sigma > 0.0)) throw ConfigError("extreme_value_sim: sigma must be > 0");
  if (rho < 0.0 || rho >= 1.0) throw ConfigError("extreme_value_sim: rho must lie in [0,1)");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double shared = std::sqrt(rho);
  const double own = std::sqrt(1.0 - rho);
  std::vector<ExtremeValueRow> rows;
  for (std::size_t N : budgets) {
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
      const double z0 = rho > 0.0 ? normal(rng) : 0.0;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i <= N; ++i) best = std::max(best, sigma * (shared * z0 + own * normal(rng)));
      sum += best;
      sum_sq += best * best;
    }
    const double m = sum / static_cast<double>(reps);
    const double var = std::max(0.0, sum_sq / static_cast<double>(reps) - m * m);
    rows.push_back({N, m, std::sqrt(var / static_cast<double>(reps)), extreme_value_bound(sigma, N)});
  }
  return rows;
}

}  // namespace gem
