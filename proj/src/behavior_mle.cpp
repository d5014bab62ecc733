#include "gem/behavior_mle.hpp"

#include <cmath>

#include "gem/error.hpp"
#include "gem/rng.hpp"

namespace gem {

double behavior_nll_and_grad(const Cgmm& model, const Matrix& states, const Matrix& actions, CgmmGrad* grad) {
  const Eigen::Index B = states.cols();
  if (actions.cols() != B || B == 0) throw ConfigError("behavior NLL: empty or mismatched batch");
  const double inv_b = 1.0 / static_cast<double>(B);
  const CgmmBatch batch = model.forward(states);
  Matrix coeffs(static_cast<Eigen::Index>(model.K()), B);
  double nll = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const Vector u = component_log_joints(model.heads_at(batch, b), actions.col(b));
    nll -= logsumexp(u) * inv_b;
    coeffs.col(b) = -inv_b * softmax(u);
  }
  if (grad && std::isfinite(nll)) accumulate_log_joint_gradients(model, batch, actions, coeffs, nullptr, *grad);
  return nll;
}

PretrainResult pretrain_behavior(BehaviorGmm& model, const Matrix& states, const Matrix& actions,
                                 const PretrainConfig& cfg, std::uint64_t seed) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw ConfigError("pretrain_behavior: dataset is empty");
  if (cfg.batch_size == 0) throw ConfigError("pretrain_behavior: batch_size must be >= 1");
  if (model.frozen()) throw FrozenModelError("attempted to pretrain a frozen behavior model");

  PretrainResult res;
  res.nll_start = behavior_nll_and_grad(model, states, actions, nullptr);
  CgmmOptimizer opt(cfg.adam, model);
  Rng rng(derive_seed(seed, "behavior_pretrain"));
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  const auto bs = static_cast<Eigen::Index>(cfg.batch_size);
  Matrix bs_states(states.rows(), bs), bs_actions(actions.rows(), bs);
  Cgmm last_good = model;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    for (Eigen::Index j = 0; j < bs; ++j) {
      const Eigen::Index i = pick(rng);
      bs_states.col(j) = states.col(i);
      bs_actions.col(j) = actions.col(i);
    }
    CgmmGrad g = model.zero_grad();
    const double loss = behavior_nll_and_grad(model, bs_states, bs_actions, &g);
    if (!std::isfinite(loss) || !opt.step(model, g)) {
      static_cast<Cgmm&>(model) = last_good;
      throw NumericalError("behavior pretraining diverged at step " + std::to_string(t) +
                           "; restored last finite parameters");
    }
    if (cfg.log_every && t % cfg.log_every == 0) {
      res.curve.push_back({t, loss});
      last_good = model;
    }
  }
  res.nll_end = behavior_nll_and_grad(model, states, actions, nullptr);
  if (cfg.freeze_after) model.freeze();
  return res;
}

}  // namespace gem
