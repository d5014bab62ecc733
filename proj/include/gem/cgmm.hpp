#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gem/adam.hpp"
#include "gem/checkpoint.hpp"
#include "gem/mlp.hpp"
#include "gem/rng.hpp"

namespace gem {

struct CgmmSpec {
  std::size_t state_dim = 1;
  std::size_t action_dim = 1;
  std::size_t K = 4;
  std::vector<std::size_t> hidden{64, 64};
  double log_std_min = std::log(1e-3);
  double log_std_max = 0.0;
  double init_log_std = -1.0;

  void validate() const;
  bool operator==(const CgmmSpec&) const = default;
};

void to_json(nlohmann::json& j, const CgmmSpec& spec);
void from_json(const nlohmann::json& j, CgmmSpec& spec);

/// Mixture parameters at a single state. Column k of `mu` / `log_std` is
/// component k.
struct GmmHeads {
  Vector logits;
  Matrix mu;
  Matrix log_std;

  std::size_t K() const { return static_cast<std::size_t>(logits.size()); }
  std::size_t A() const { return static_cast<std::size_t>(mu.rows()); }
  Vector log_weights() const;
  Vector weights() const;
};

double logsumexp(const Vector& v);
Vector softmax(const Vector& v);

Vector component_log_joints(const GmmHeads& h, const Vector& a);
double log_prob(const GmmHeads& h, const Vector& a);
Vector responsibilities(const GmmHeads& h, const Vector& a);

/// log-density of every column of `actions` (A x n) under the mixture.
Vector log_prob_batch(const GmmHeads& h, const Matrix& actions);

/// Ancestral sampling, one candidate at a time so that a larger n extends a
/// smaller one drawn from the same generator state. Returns A x n.
Matrix sample(const GmmHeads& h, Rng& rng, std::size_t n, std::vector<std::size_t>* components = nullptr);
Matrix sample_component(const GmmHeads& h, std::size_t k, Rng& rng, std::size_t n);

/// Index of the largest gating weight, lowest index on ties.
std::size_t top_component(const GmmHeads& h);
Vector anchor(const GmmHeads& h);
Vector barycenter(const GmmHeads& h);

struct HeadGradients {
  Vector d_logits;
  Matrix d_mu;
  Matrix d_log_std;
};

/// Gradient of sum_k c_k u_k(a) with respect to logits, means and log-stds.
HeadGradients weighted_log_joint_gradients(const GmmHeads& h, const Vector& a, const Vector& c);

/// Gradient of log_prob(a); the weights are the responsibilities.
HeadGradients log_prob_gradients(const GmmHeads& h, const Vector& a);

struct CgmmGrad {
  ParamVector gating;
  ParamVector mean;
  ParamVector log_std;
};

/// Batched forward state. Column b of `logits` / `means` belongs to sample b;
/// `means` rows are ordered component-major (k * A + d).
struct CgmmBatch {
  Matrix logits;
  Matrix means;
  MlpTape gate_tape;
  MlpTape mean_tape;
};

/// Conditional diagonal Gaussian mixture: a gating net (state -> K logits), a
/// mean net (state -> K*A tanh-squashed means) and state-independent log-stds.
class Cgmm {
 public:
  Cgmm() = default;
  Cgmm(CgmmSpec spec, std::uint64_t seed);
  Cgmm(CgmmSpec spec, Mlp gating, Mlp mean, ParamVector log_std, bool frozen = false);

  const CgmmSpec& spec() const { return spec_; }
  std::size_t K() const { return spec_.K; }
  std::size_t A() const { return spec_.action_dim; }

  const Mlp& gating_net() const { return gating_; }
  const Mlp& mean_net() const { return mean_; }
  const ParamVector& log_std_params() const { return log_std_; }
  Matrix log_std() const;

  /// Direct parameter access for tests and loaders; bypasses the freeze.
  Mlp& mutable_gating_net() { return gating_; }
  Mlp& mutable_mean_net() { return mean_; }
  ParamVector& mutable_log_std() { return log_std_; }
  void clamp_log_std();

  GmmHeads heads(std::span<const double> s) const;
  GmmHeads heads(const Vector& s) const { return heads(std::span<const double>(s.data(), s.size())); }

  CgmmBatch forward(const Matrix& states) const;
  GmmHeads heads_at(const CgmmBatch& batch, Eigen::Index b) const;

  CgmmGrad zero_grad() const;
  /// d_logits: K x B, d_means: (K*A) x B w.r.t. the squashed means, d_log_std:
  /// A x K summed over the batch. All are gradients of the loss to minimize.
  void backward(const CgmmBatch& batch, const Matrix& d_logits, const Matrix& d_means,
                const Matrix& d_log_std, CgmmGrad& grad) const;

  double log_prob(std::span<const double> s, std::span<const double> a) const;
  Vector component_log_joints(std::span<const double> s, std::span<const double> a) const;
  Vector responsibilities(std::span<const double> s, std::span<const double> a) const;
  Vector anchor(std::span<const double> s) const;

  /// d log p(a|s) / d(means, log_std, logits). A log-std sitting on a clamp
  /// bound gets a zero gradient in the direction that would leave the box.
  HeadGradients nll_gradients(std::span<const double> s, std::span<const double> a) const;

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  void save(Checkpoint& ckpt, const std::string& prefix) const;
  static Cgmm load(const Checkpoint& ckpt, const std::string& prefix);

 private:
  CgmmSpec spec_;
  Mlp gating_;
  Mlp mean_;
  ParamVector log_std_;
  bool frozen_ = false;
};

/// Accumulates into `grad` the gradient of
///   sum_b [ sum_k coeffs(k,b) * u_k(s_b, a_b) + extra_logits.col(b) . logits_b ]
/// where `batch` was produced by model.forward(states). `extra_logits` may be
/// null.
void accumulate_log_joint_gradients(const Cgmm& model, const CgmmBatch& batch, const Matrix& actions,
                                    const Matrix& coeffs, const Matrix* extra_logits, CgmmGrad& grad);

/// Adam over all three parameter groups. Rejects frozen models; keeps
/// log-stds inside their bounds after every update.
class CgmmOptimizer {
 public:
  CgmmOptimizer() = default;
  CgmmOptimizer(AdamConfig config, const Cgmm& model);

  /// Returns false (and changes nothing) when any gradient is non-finite.
  bool step(Cgmm& model, CgmmGrad& grad);
  void set_lr(double lr);

 private:
  Adam gating_;
  Adam mean_;
  Adam log_std_;
};

struct ActorRole {};
struct BehaviorRole {};

/// Role-tagged mixtures. The two are unrelated types so that a support score
/// can only be computed from a behavior model.
template <class Role>
class RoleGmm : public Cgmm {
 public:
  RoleGmm() = default;
  RoleGmm(CgmmSpec spec, std::uint64_t seed) : Cgmm(std::move(spec), seed) {}
  explicit RoleGmm(Cgmm base) : Cgmm(std::move(base)) {}
};

using ActorGmm = RoleGmm<ActorRole>;
using BehaviorGmm = RoleGmm<BehaviorRole>;

}  // namespace gem
