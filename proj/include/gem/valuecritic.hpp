#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gem/adam.hpp"
#include "gem/checkpoint.hpp"
#include "gem/mlp.hpp"

namespace gem {

/// y = r + gamma * (1 - done) * V(s')
double q_target(double r, double done, double gamma, double v_next);

/// |tau - 1{delta < 0}| * delta^2
double expectile_loss(double delta, double tau);
/// d expectile_loss / d delta
double expectile_loss_grad(double delta, double tau);

struct EnsembleStats {
  double mean = 0.0;
  double std_pop = 0.0;
  double q_min = 0.0;
  double lcb = 0.0;
};

EnsembleStats ensemble_stats(std::span<const double> heads, double lambda);

/// target <- (1 - tau) * target + tau * online
void polyak(ParamVector& target, const ParamVector& online, double tau);

/// Stacks states (S x B) over actions (A x B).
Matrix concat_rows(const Matrix& states, const Matrix& actions);

class CriticEnsemble {
 public:
  CriticEnsemble() = default;
  CriticEnsemble(std::size_t state_dim, std::size_t action_dim, std::size_t M, std::vector<std::size_t> hidden,
                 std::uint64_t seed, AdamConfig adam = {});

  std::size_t M() const { return heads_.size(); }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }

  /// M x B head values for the online or target networks.
  Matrix evaluate(const Matrix& states, const Matrix& actions, bool target = false) const;
  /// Per-column minimum over target heads.
  Vector q_min_target(const Matrix& states, const Matrix& actions) const;

  /// Mean over batch and heads of (Q_i - y)^2, and its gradient per head.
  double loss_and_grad(const Matrix& states, const Matrix& actions, const Vector& y,
                       std::vector<ParamVector>* grads) const;
  /// One Adam step on every head. Throws NumericalError on a non-finite loss
  /// (parameters untouched).
  double update(const Matrix& states, const Matrix& actions, const Vector& y);
  void polyak_update(double tau);

  const std::vector<Mlp>& heads() const { return heads_; }
  const std::vector<Mlp>& target_heads() const { return targets_; }
  std::vector<Mlp>& mutable_heads() { return heads_; }
  std::vector<Mlp>& mutable_target_heads() { return targets_; }

  void save(Checkpoint& ckpt, const std::string& prefix) const;
  static CriticEnsemble load(const Checkpoint& ckpt, const std::string& prefix, AdamConfig adam = {});

 private:
  std::size_t state_dim_ = 0;
  std::size_t action_dim_ = 0;
  std::vector<Mlp> heads_;
  std::vector<Mlp> targets_;
  std::vector<Adam> opts_;
};

class ValueNet {
 public:
  ValueNet() = default;
  ValueNet(MlpSpec spec, double expectile_tau, std::uint64_t seed, AdamConfig adam = {});
  ValueNet(Mlp net, double expectile_tau, AdamConfig adam = {});

  double expectile_tau() const { return tau_; }
  const Mlp& net() const { return net_; }
  Mlp& mutable_net() { return net_; }

  Vector evaluate(const Matrix& states) const;
  /// Mean expectile loss of (target - V(s)).
  double loss_and_grad(const Matrix& states, const Vector& targets, ParamVector* grad) const;
  double update(const Matrix& states, const Vector& targets);
  void set_lr(double lr) { opt_.set_lr(lr); }

  void save(Checkpoint& ckpt, const std::string& name) const;
  static ValueNet load(const Checkpoint& ckpt, const std::string& name, AdamConfig adam = {});

 private:
  Mlp net_;
  double tau_ = 0.7;
  Adam opt_;
};

/// Q_min over target heads minus V(s), one entry per column.
Vector advantage(const CriticEnsemble& critics, const ValueNet& value, const Matrix& states, const Matrix& actions);

}  // namespace gem
