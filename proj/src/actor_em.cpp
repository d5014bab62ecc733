#include "gem/actor_em.hpp"

#include <cmath>

#include "gem/error.hpp"

namespace gem {

void GuidanceConfig::validate() const {
  if (beta < 0.0) throw ConfigError("guidance beta must be >= 0");
  if (!(omega_max > 0.0)) throw ConfigError("guidance omega_max must be > 0");
  if (alpha_entropy < 0.0) throw ConfigError("entropy weight must be >= 0");
}

double loose_elbo(const GmmHeads& h, const Vector& a) {
  const Vector u = component_log_joints(h, a);
  return softmax(u).dot(u);
}

double guidance_weight(double adv, const GuidanceConfig& cfg) {
  return std::min(std::exp(cfg.beta * adv), cfg.omega_max);
}

Vector guidance_weights(const Vector& adv, const GuidanceConfig& cfg) {
  Vector w(adv.size());
  for (Eigen::Index i = 0; i < adv.size(); ++i) w[i] = guidance_weight(adv[i], cfg);
  return w;
}

double gate_entropy(const GmmHeads& h) {
  const Vector w = h.weights();
  return -(w.array() * (w.array() + kEntropyGuard).log()).sum();
}

Vector gate_entropy_logit_grad(const GmmHeads& h) {
  const Vector w = h.weights();
  const Vector g = (-(w.array() + kEntropyGuard).log() - w.array() / (w.array() + kEntropyGuard)).matrix();
  return (w.array() * (g.array() - w.dot(g))).matrix();
}

Matrix batch_responsibilities(const Cgmm& model, const Matrix& states, const Matrix& actions) {
  const CgmmBatch batch = model.forward(states);
  Matrix G(static_cast<Eigen::Index>(model.K()), states.cols());
  for (Eigen::Index b = 0; b < states.cols(); ++b) G.col(b) = responsibilities(model.heads_at(batch, b), actions.col(b));
  return G;
}

ActorLoss actor_loss_and_grad(const Cgmm& model, const Matrix& states, const Matrix& actions, const Vector& omega,
                              const GuidanceConfig& cfg, CgmmGrad* grad, const Matrix* fixed_gamma) {
  const Eigen::Index B = states.cols();
  const auto K = static_cast<Eigen::Index>(model.K());
  if (actions.cols() != B || omega.size() != B) throw ConfigError("actor loss: batch size mismatch");
  if (fixed_gamma && (fixed_gamma->rows() != K || fixed_gamma->cols() != B)) {
    throw ConfigError("actor loss: fixed responsibilities must be K x B");
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  const CgmmBatch batch = model.forward(states);
  Matrix coeffs(K, B);
  Matrix extra(K, B);
  ActorLoss out;
  for (Eigen::Index b = 0; b < B; ++b) {
    const GmmHeads h = model.heads_at(batch, b);
    const Vector u = component_log_joints(h, actions.col(b));
    const Vector gamma = fixed_gamma ? Vector(fixed_gamma->col(b)) : softmax(u);
    const double elbo = gamma.dot(u);
    const double ent = gate_entropy(h);
    out.weighted_nelbo -= omega[b] * elbo * inv_b;
    out.entropy += ent * inv_b;
    if (grad) {
      if (cfg.detach_gamma || fixed_gamma) {
        coeffs.col(b) = -omega[b] * inv_b * gamma;
      } else {
        coeffs.col(b) = (-omega[b] * inv_b * gamma.array() * (1.0 + u.array() - elbo)).matrix();
      }
      extra.col(b) = -cfg.alpha_entropy * inv_b * gate_entropy_logit_grad(h);
    }
  }
  out.loss = out.weighted_nelbo - cfg.alpha_entropy * out.entropy;
  if (grad && std::isfinite(out.loss)) accumulate_log_joint_gradients(model, batch, actions, coeffs, &extra, *grad);
  return out;
}

ActorLoss actor_step(Cgmm& model, CgmmOptimizer& opt, const Matrix& states, const Matrix& actions,
                     const Vector& omega, const GuidanceConfig& cfg) {
  if (model.frozen()) throw FrozenModelError("attempted update of a frozen actor");
  CgmmGrad g = model.zero_grad();
  const ActorLoss loss = actor_loss_and_grad(model, states, actions, omega, cfg, &g);
  if (!std::isfinite(loss.loss)) {
    throw NumericalError("actor loss is not finite (weighted -ELBO " + std::to_string(loss.weighted_nelbo) +
                         ", entropy " + std::to_string(loss.entropy) + ")");
  }
  if (!opt.step(model, g)) throw NumericalError("actor gradient is not finite");
  return loss;
}

}  // namespace gem
