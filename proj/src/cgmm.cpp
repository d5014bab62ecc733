#include "gem/cgmm.hpp"

#include <algorithm>

#include "gem/error.hpp"

namespace gem {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

MlpSpec gating_spec(const CgmmSpec& s) {
  return MlpSpec{s.state_dim, s.hidden, s.K, Activation::kTanh};
}

MlpSpec mean_spec(const CgmmSpec& s) {
  return MlpSpec{s.state_dim, s.hidden, s.K * s.action_dim, Activation::kTanh};
}

LayoutPtr log_std_layout(const CgmmSpec& s) {
  return make_layout({{"log_std", s.action_dim, s.K}});
}

void check_action(const GmmHeads& h, Eigen::Index n) {
  if (static_cast<std::size_t>(n) != h.A()) {
    throw ConfigError("action has dimension " + std::to_string(n) + ", expected " + std::to_string(h.A()));
  }
}

Vector to_vector(std::span<const double> x) {
  return Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
}

}  // namespace

void CgmmSpec::validate() const {
  if (state_dim == 0 || action_dim == 0 || K == 0) throw ConfigError("CgmmSpec: dimensions must be >= 1");
  if (!(log_std_min < log_std_max)) throw ConfigError("CgmmSpec: log_std_min must be < log_std_max");
  if (init_log_std < log_std_min || init_log_std > log_std_max) {
    throw ConfigError("CgmmSpec: init_log_std outside clamp bounds");
  }
}

void to_json(nlohmann::json& j, const CgmmSpec& s) {
  j = nlohmann::json{{"state_dim", s.state_dim},     {"action_dim", s.action_dim},
                     {"K", s.K},                     {"hidden", s.hidden},
                     {"log_std_min", s.log_std_min}, {"log_std_max", s.log_std_max},
                     {"init_log_std", s.init_log_std}};
}

void from_json(const nlohmann::json& j, CgmmSpec& s) {
  s.state_dim = j.at("state_dim").get<std::size_t>();
  s.action_dim = j.at("action_dim").get<std::size_t>();
  s.K = j.at("K").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.log_std_min = j.at("log_std_min").get<double>();
  s.log_std_max = j.at("log_std_max").get<double>();
  s.init_log_std = j.at("init_log_std").get<double>();
}

double logsumexp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vector softmax(const Vector& v) {
  Vector e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

Vector GmmHeads::log_weights() const { return logits.array() - logsumexp(logits); }

Vector GmmHeads::weights() const { return softmax(logits); }

Vector component_log_joints(const GmmHeads& h, const Vector& a) {
  check_action(h, a.size());
  const Vector lw = h.log_weights();
  Vector u(h.K());
  for (std::size_t k = 0; k < h.K(); ++k) {
    const auto ls = h.log_std.col(static_cast<Eigen::Index>(k)).array();
    const auto z = (a.array() - h.mu.col(static_cast<Eigen::Index>(k)).array()) * (-ls).exp();
    u[k] = lw[k] - 0.5 * (z.square() + kLog2Pi + 2.0 * ls).sum();
  }
  return u;
}

double log_prob(const GmmHeads& h, const Vector& a) { return logsumexp(component_log_joints(h, a)); }

Vector responsibilities(const GmmHeads& h, const Vector& a) { return softmax(component_log_joints(h, a)); }

Vector log_prob_batch(const GmmHeads& h, const Matrix& actions) {
  check_action(h, actions.rows());
  const Eigen::Index n = actions.cols();
  const Vector lw = h.log_weights();
  Matrix u(static_cast<Eigen::Index>(h.K()), n);
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(h.K()); ++k) {
    const Eigen::ArrayXd inv_sigma = (-h.log_std.col(k).array()).exp();
    const double c = lw[k] - 0.5 * (kLog2Pi * static_cast<double>(h.A()) + 2.0 * h.log_std.col(k).sum());
    Eigen::ArrayXXd z = (actions.colwise() - h.mu.col(k)).array().colwise() * inv_sigma;
    u.row(k) = (c - 0.5 * z.square().colwise().sum()).matrix();
  }
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = logsumexp(u.col(i));
  return out;
}

Matrix sample(const GmmHeads& h, Rng& rng, std::size_t n, std::vector<std::size_t>* components) {
  const Vector w = h.weights();
  const Matrix sigma = h.log_std.array().exp().matrix();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(h.A()), static_cast<Eigen::Index>(n));
  if (components) components->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unif(rng);
    std::size_t k = h.K() - 1;
    double acc = 0.0;
    for (std::size_t j = 0; j < h.K(); ++j) {
      acc += w[static_cast<Eigen::Index>(j)];
      if (u < acc) {
        k = j;
        break;
      }
    }
    for (std::size_t d = 0; d < h.A(); ++d) {
      const auto kd = static_cast<Eigen::Index>(k);
      const auto dd = static_cast<Eigen::Index>(d);
      out(dd, static_cast<Eigen::Index>(i)) = h.mu(dd, kd) + sigma(dd, kd) * normal(rng);
    }
    if (components) (*components)[i] = k;
  }
  return out;
}

Matrix sample_component(const GmmHeads& h, std::size_t k, Rng& rng, std::size_t n) {
  if (k >= h.K()) throw ConfigError("sample_component: component index out of range");
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto kk = static_cast<Eigen::Index>(k);
  Matrix out(static_cast<Eigen::Index>(h.A()), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    for (Eigen::Index d = 0; d < out.rows(); ++d) {
      out(d, i) = h.mu(d, kk) + std::exp(h.log_std(d, kk)) * normal(rng);
    }
  }
  return out;
}

std::size_t top_component(const GmmHeads& h) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < h.K(); ++k) {
    if (h.logits[static_cast<Eigen::Index>(k)] > h.logits[static_cast<Eigen::Index>(best)]) best = k;
  }
  return best;
}

Vector anchor(const GmmHeads& h) { return h.mu.col(static_cast<Eigen::Index>(top_component(h))); }

Vector barycenter(const GmmHeads& h) { return h.mu * h.weights(); }

HeadGradients weighted_log_joint_gradients(const GmmHeads& h, const Vector& a, const Vector& c) {
  check_action(h, a.size());
  if (static_cast<std::size_t>(c.size()) != h.K()) throw ConfigError("weights must have K entries");
  const Vector w = h.weights();
  HeadGradients g;
  g.d_logits = c - w * c.sum();
  g.d_mu.resize(h.mu.rows(), h.mu.cols());
  g.d_log_std.resize(h.mu.rows(), h.mu.cols());
  for (Eigen::Index k = 0; k < h.mu.cols(); ++k) {
    const Eigen::ArrayXd inv_var = (-2.0 * h.log_std.col(k).array()).exp();
    const Eigen::ArrayXd diff = a.array() - h.mu.col(k).array();
    g.d_mu.col(k) = (c[k] * diff * inv_var).matrix();
    g.d_log_std.col(k) = (c[k] * (diff.square() * inv_var - 1.0)).matrix();
  }
  return g;
}

HeadGradients log_prob_gradients(const GmmHeads& h, const Vector& a) {
  return weighted_log_joint_gradients(h, a, responsibilities(h, a));
}

Cgmm::Cgmm(CgmmSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)),
      gating_(gating_spec(spec_), derive_seed(seed, "gating")),
      mean_(mean_spec(spec_), derive_seed(seed, "mean")),
      log_std_(log_std_layout(spec_)) {
  spec_.validate();
  for (double& v : log_std_.values()) v = spec_.init_log_std;
}

Cgmm::Cgmm(CgmmSpec spec, Mlp gating, Mlp mean, ParamVector log_std, bool frozen)
    : spec_(std::move(spec)),
      gating_(std::move(gating)),
      mean_(std::move(mean)),
      log_std_(std::move(log_std)),
      frozen_(frozen) {
  spec_.validate();
  if (!(gating_.spec() == gating_spec(spec_)) || !(mean_.spec() == mean_spec(spec_)) ||
      !(log_std_.layout() == *log_std_layout(spec_))) {
    throw ConfigError("Cgmm: component networks do not match spec");
  }
}

Matrix Cgmm::log_std() const {
  return Eigen::Map<const Matrix>(log_std_.data(), static_cast<Eigen::Index>(spec_.action_dim),
                                  static_cast<Eigen::Index>(spec_.K));
}

void Cgmm::clamp_log_std() {
  for (double& v : log_std_.values()) v = std::clamp(v, spec_.log_std_min, spec_.log_std_max);
}

GmmHeads Cgmm::heads(std::span<const double> s) const {
  Matrix x = Eigen::Map<const Matrix>(s.data(), static_cast<Eigen::Index>(s.size()), 1);
  CgmmBatch b;
  b.logits = gating_.forward(x);
  b.means = mean_.forward(x).array().tanh().matrix();
  return heads_at(b, 0);
}

CgmmBatch Cgmm::forward(const Matrix& states) const {
  CgmmBatch b;
  b.logits = gating_.forward(states, b.gate_tape);
  b.means = mean_.forward(states, b.mean_tape).array().tanh().matrix();
  return b;
}

GmmHeads Cgmm::heads_at(const CgmmBatch& batch, Eigen::Index b) const {
  GmmHeads h;
  h.logits = batch.logits.col(b);
  h.mu = Eigen::Map<const Matrix>(batch.means.col(b).data(), static_cast<Eigen::Index>(spec_.action_dim),
                                  static_cast<Eigen::Index>(spec_.K));
  h.log_std = log_std();
  return h;
}

CgmmGrad Cgmm::zero_grad() const {
  return CgmmGrad{gating_.zero_grad(), mean_.zero_grad(), ParamVector::zeros_like(log_std_)};
}

void Cgmm::backward(const CgmmBatch& batch, const Matrix& d_logits, const Matrix& d_means,
                    const Matrix& d_log_std, CgmmGrad& grad) const {
  if (d_logits.rows() != batch.logits.rows() || d_logits.cols() != batch.logits.cols() ||
      d_means.rows() != batch.means.rows() || d_means.cols() != batch.means.cols() ||
      static_cast<std::size_t>(d_log_std.rows()) != spec_.action_dim ||
      static_cast<std::size_t>(d_log_std.cols()) != spec_.K) {
    throw ConfigError("Cgmm::backward: gradient shape mismatch");
  }
  gating_.backward(batch.gate_tape, d_logits, grad.gating);
  const Matrix d_raw = (d_means.array() * (1.0 - batch.means.array().square())).matrix();
  mean_.backward(batch.mean_tape, d_raw, grad.mean);
  Eigen::Map<Matrix>(grad.log_std.data(), d_log_std.rows(), d_log_std.cols()) += d_log_std;
}

double Cgmm::log_prob(std::span<const double> s, std::span<const double> a) const {
  return gem::log_prob(heads(s), to_vector(a));
}

Vector Cgmm::component_log_joints(std::span<const double> s, std::span<const double> a) const {
  return gem::component_log_joints(heads(s), to_vector(a));
}

Vector Cgmm::responsibilities(std::span<const double> s, std::span<const double> a) const {
  return gem::responsibilities(heads(s), to_vector(a));
}

Vector Cgmm::anchor(std::span<const double> s) const { return gem::anchor(heads(s)); }

HeadGradients Cgmm::nll_gradients(std::span<const double> s, std::span<const double> a) const {
  const GmmHeads h = heads(s);
  HeadGradients g = log_prob_gradients(h, to_vector(a));
  for (Eigen::Index i = 0; i < g.d_log_std.size(); ++i) {
    const double v = h.log_std(i);
    double& d = g.d_log_std(i);
    if ((v >= spec_.log_std_max && d > 0.0) || (v <= spec_.log_std_min && d < 0.0)) d = 0.0;
  }
  return g;
}

void Cgmm::save(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.add(prefix + ".gating", "mlp", gating_.spec(), gating_.params());
  ckpt.add(prefix + ".mean", "mlp", mean_.spec(), mean_.params());
  ckpt.add(prefix + ".log_std", "cgmm", nlohmann::json{{"cgmm", spec_}, {"frozen", frozen_}}, log_std_);
}

Cgmm Cgmm::load(const Checkpoint& ckpt, const std::string& prefix) {
  const auto& head = ckpt.get(prefix + ".log_std");
  CgmmSpec spec;
  bool frozen = false;
  try {
    spec = head.spec.at("cgmm").get<CgmmSpec>();
    frozen = head.spec.at("frozen").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad format: mixture spec for '" + prefix + "': " + e.what());
  }
  const auto& g = ckpt.get(prefix + ".gating");
  const auto& m = ckpt.get(prefix + ".mean");
  expect_layout(g, *mlp_layout(gating_spec(spec)));
  expect_layout(m, *mlp_layout(mean_spec(spec)));
  expect_layout(head, *log_std_layout(spec));
  return Cgmm(spec, Mlp(gating_spec(spec), g.params), Mlp(mean_spec(spec), m.params), head.params, frozen);
}

void accumulate_log_joint_gradients(const Cgmm& model, const CgmmBatch& batch, const Matrix& actions,
                                    const Matrix& coeffs, const Matrix* extra_logits, CgmmGrad& grad) {
  const Eigen::Index B = batch.logits.cols();
  const auto K = static_cast<Eigen::Index>(model.K());
  const auto A = static_cast<Eigen::Index>(model.A());
  if (actions.rows() != A || actions.cols() != B || coeffs.rows() != K || coeffs.cols() != B) {
    throw ConfigError("accumulate_log_joint_gradients: shape mismatch");
  }
  Matrix d_logits(K, B);
  Matrix d_means(K * A, B);
  Matrix d_log_std = Matrix::Zero(A, K);
  for (Eigen::Index b = 0; b < B; ++b) {
    const GmmHeads h = model.heads_at(batch, b);
    const HeadGradients g = weighted_log_joint_gradients(h, actions.col(b), coeffs.col(b));
    d_logits.col(b) = g.d_logits;
    d_means.col(b) = Eigen::Map<const Vector>(g.d_mu.data(), K * A);
    d_log_std += g.d_log_std;
  }
  if (extra_logits) d_logits += *extra_logits;
  model.backward(batch, d_logits, d_means, d_log_std, grad);
}

CgmmOptimizer::CgmmOptimizer(AdamConfig config, const Cgmm& model)
    : gating_(config, model.gating_net().params()),
      mean_(config, model.mean_net().params()),
      log_std_(config, model.log_std_params()) {}

bool CgmmOptimizer::step(Cgmm& model, CgmmGrad& grad) {
  if (model.frozen()) throw FrozenModelError("attempted update of a frozen mixture model");
  if (!grad.gating.all_finite() || !grad.mean.all_finite() || !grad.log_std.all_finite()) return false;
  const auto& spec = model.spec();
  const auto& ls = model.log_std_params();
  for (std::size_t i = 0; i < ls.size(); ++i) {
    if ((ls[i] >= spec.log_std_max && grad.log_std[i] < 0.0) ||
        (ls[i] <= spec.log_std_min && grad.log_std[i] > 0.0)) {
      grad.log_std[i] = 0.0;
    }
  }
  gating_.step(model.mutable_gating_net().params(), grad.gating);
  mean_.step(model.mutable_mean_net().params(), grad.mean);
  log_std_.step(model.mutable_log_std(), grad.log_std);
  model.clamp_log_std();
  return true;
}

void CgmmOptimizer::set_lr(double lr) {
  gating_.set_lr(lr);
  mean_.set_lr(lr);
  log_std_.set_lr(lr);
}

}  // namespace gem
