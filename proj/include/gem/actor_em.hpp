#pragma once

#include "gem/cgmm.hpp"

namespace gem {

struct GuidanceConfig {
  double beta = 3.0;
  double omega_max = 100.0;
  double alpha_entropy = 1e-3;
  bool detach_gamma = true;

  void validate() const;
  bool operator==(const GuidanceConfig&) const = default;
};

constexpr double kEntropyGuard = 1e-6;

/// sum_k gamma_k u_k
double loose_elbo(const GmmHeads& h, const Vector& a);

/// min(exp(beta * adv), omega_max)
double guidance_weight(double adv, const GuidanceConfig& cfg);
Vector guidance_weights(const Vector& adv, const GuidanceConfig& cfg);

/// -sum_k w_k log(w_k + 1e-6)
double gate_entropy(const GmmHeads& h);
/// d gate_entropy / d logits
Vector gate_entropy_logit_grad(const GmmHeads& h);

struct ActorLoss {
  double loss = 0.0;
  double weighted_nelbo = 0.0;
  double entropy = 0.0;
};

/// J = mean_b omega_b * (-ELBO_loose(s_b, a_b)) - alpha * mean_b H(w(s_b)).
///
/// With detach_gamma the responsibilities are constants in the gradient; pass
/// `fixed_gamma` (K x B) to evaluate the surrogate at responsibilities other
/// than the current ones. Gradients are accumulated into `grad` when non-null.
ActorLoss actor_loss_and_grad(const Cgmm& model, const Matrix& states, const Matrix& actions, const Vector& omega,
                              const GuidanceConfig& cfg, CgmmGrad* grad, const Matrix* fixed_gamma = nullptr);

/// Responsibilities of every (s_b, a_b) as a K x B matrix.
Matrix batch_responsibilities(const Cgmm& model, const Matrix& states, const Matrix& actions);

/// One optimizer step on the actor. Responsibilities are recomputed from the
/// current parameters. Throws NumericalError (parameters untouched) if the
/// loss or gradient is non-finite.
ActorLoss actor_step(Cgmm& model, CgmmOptimizer& opt, const Matrix& states, const Matrix& actions,
                     const Vector& omega, const GuidanceConfig& cfg);

}  // namespace gem
