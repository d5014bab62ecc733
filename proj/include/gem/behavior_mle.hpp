#pragma once

#include <cstdint>
#include <vector>

#include "gem/cgmm.hpp"

namespace gem {

/// Mean negative log-likelihood of the columns of `actions` given `states`.
/// Accumulates its gradient into `grad` when non-null.
double behavior_nll_and_grad(const Cgmm& model, const Matrix& states, const Matrix& actions, CgmmGrad* grad);

struct PretrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 256;
  AdamConfig adam;
  bool freeze_after = true;
  std::size_t log_every = 100;
};

struct LossPoint {
  std::size_t step;
  double loss;
};

struct PretrainResult {
  double nll_start = 0.0;
  double nll_end = 0.0;
  std::vector<LossPoint> curve;
};

/// Minibatch maximum likelihood on dataset actions. On a non-finite loss the
/// model is restored to the last finite parameters and NumericalError is
/// thrown.
PretrainResult pretrain_behavior(BehaviorGmm& model, const Matrix& states, const Matrix& actions,
                                 const PretrainConfig& cfg, std::uint64_t seed);

}  // namespace gem
