#include "gem/valuecritic.hpp"

#include <cmath>

#include "gem/error.hpp"
#include "gem/rng.hpp"

namespace gem {

double q_target(double r, double done, double gamma, double v_next) {
  return r + gamma * (1.0 - done) * v_next;
}

double expectile_loss(double delta, double tau) {
  const double w = delta < 0.0 ? 1.0 - tau : tau;
  return w * delta * delta;
}

double expectile_loss_grad(double delta, double tau) {
  const double w = delta < 0.0 ? 1.0 - tau : tau;
  return 2.0 * w * delta;
}

EnsembleStats ensemble_stats(std::span<const double> heads, double lambda) {
  if (heads.empty()) throw ConfigError("ensemble_stats: no heads");
  if (lambda < 0.0) throw ConfigError("ensemble_stats: lambda must be >= 0");
  EnsembleStats st;
  double sum = 0.0;
  st.q_min = heads[0];
  for (double q : heads) {
    sum += q;
    st.q_min = std::min(st.q_min, q);
  }
  const double m = static_cast<double>(heads.size());
  st.mean = sum / m;
  double ss = 0.0;
  for (double q : heads) ss += (q - st.mean) * (q - st.mean);
  st.std_pop = std::sqrt(ss / m);
  st.lcb = st.mean - lambda * st.std_pop;
  return st;
}

void polyak(ParamVector& target, const ParamVector& online, double tau) {
  if (!target.same_layout(online)) throw ConfigError("polyak: shape mismatch");
  if (tau < 0.0 || tau > 1.0) throw ConfigError("polyak: tau must be in [0,1]");
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (1.0 - tau) * target[i] + tau * online[i];
}

Matrix concat_rows(const Matrix& states, const Matrix& actions) {
  if (states.cols() != actions.cols()) throw ConfigError("concat_rows: batch size mismatch");
  Matrix x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

CriticEnsemble::CriticEnsemble(std::size_t state_dim, std::size_t action_dim, std::size_t M,
                               std::vector<std::size_t> hidden, std::uint64_t seed, AdamConfig adam)
    : state_dim_(state_dim), action_dim_(action_dim) {
  if (M == 0) throw ConfigError("CriticEnsemble: M must be >= 1");
  const MlpSpec spec{state_dim + action_dim, std::move(hidden), 1, Activation::kRelu};
  for (std::size_t i = 0; i < M; ++i) {
    heads_.emplace_back(spec, derive_seed(seed, i));
    targets_.push_back(heads_.back());
    opts_.emplace_back(adam, heads_.back().params());
  }
}

Matrix CriticEnsemble::evaluate(const Matrix& states, const Matrix& actions, bool target) const {
  const Matrix x = concat_rows(states, actions);
  const auto& nets = target ? targets_ : heads_;
  Matrix out(static_cast<Eigen::Index>(nets.size()), x.cols());
  for (std::size_t i = 0; i < nets.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = nets[i].forward(x);
  return out;
}

Vector CriticEnsemble::q_min_target(const Matrix& states, const Matrix& actions) const {
  return evaluate(states, actions, true).colwise().minCoeff().transpose();
}

double CriticEnsemble::loss_and_grad(const Matrix& states, const Matrix& actions, const Vector& y,
                                     std::vector<ParamVector>* grads) const {
  const Matrix x = concat_rows(states, actions);
  if (y.size() != x.cols()) throw ConfigError("critic loss: target count mismatch");
  const double denom = static_cast<double>(x.cols()) * static_cast<double>(M());
  double loss = 0.0;
  if (grads) {
    grads->clear();
    for (const auto& h : heads_) grads->push_back(h.zero_grad());
  }
  for (std::size_t i = 0; i < M(); ++i) {
    MlpTape tape;
    const Matrix q = heads_[i].forward(x, tape);
    const Matrix diff = q - y.transpose();
    loss += diff.squaredNorm() / denom;
    if (grads && std::isfinite(loss)) heads_[i].backward(tape, 2.0 * diff / denom, (*grads)[i]);
  }
  return loss;
}

double CriticEnsemble::update(const Matrix& states, const Matrix& actions, const Vector& y) {
  std::vector<ParamVector> grads;
  const double loss = loss_and_grad(states, actions, y, &grads);
  if (!std::isfinite(loss)) throw NumericalError("critic loss is not finite");
  for (const auto& g : grads) {
    if (!g.all_finite()) throw NumericalError("critic gradient is not finite");
  }
  for (std::size_t i = 0; i < M(); ++i) opts_[i].step(heads_[i].params(), grads[i]);
  return loss;
}

void CriticEnsemble::polyak_update(double tau) {
  for (std::size_t i = 0; i < M(); ++i) polyak(targets_[i].params(), heads_[i].params(), tau);
}

void CriticEnsemble::save(Checkpoint& ckpt, const std::string& prefix) const {
  for (std::size_t i = 0; i < M(); ++i) {
    const std::string base = prefix + ".q" + std::to_string(i);
    nlohmann::json spec = heads_[i].spec();
    spec["state_dim"] = state_dim_;
    spec["action_dim"] = action_dim_;
    ckpt.add(base, "critic_head", spec, heads_[i].params());
    ckpt.add(base + ".target", "critic_target", spec, targets_[i].params());
  }
}

CriticEnsemble CriticEnsemble::load(const Checkpoint& ckpt, const std::string& prefix, AdamConfig adam) {
  CriticEnsemble c;
  for (std::size_t i = 0;; ++i) {
    const std::string base = prefix + ".q" + std::to_string(i);
    if (!ckpt.has(base)) break;
    const auto& e = ckpt.get(base);
    const auto& t = ckpt.get(base + ".target");
    MlpSpec spec;
    try {
      spec = e.spec.get<MlpSpec>();
      c.state_dim_ = e.spec.at("state_dim").get<std::size_t>();
      c.action_dim_ = e.spec.at("action_dim").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("bad format: critic spec for '" + base + "': " + ex.what());
    }
    expect_layout(e, *mlp_layout(spec));
    expect_layout(t, *mlp_layout(spec));
    c.heads_.emplace_back(spec, e.params);
    c.targets_.emplace_back(spec, t.params);
    c.opts_.emplace_back(adam, e.params);
  }
  if (c.heads_.empty()) throw FormatError("checkpoint has no critic heads under '" + prefix + "'");
  return c;
}

ValueNet::ValueNet(MlpSpec spec, double expectile_tau, std::uint64_t seed, AdamConfig adam)
    : ValueNet(Mlp(std::move(spec), seed), expectile_tau, adam) {}

ValueNet::ValueNet(Mlp net, double expectile_tau, AdamConfig adam)
    : net_(std::move(net)), tau_(expectile_tau), opt_(adam, net_.params()) {
  if (!(tau_ > 0.0 && tau_ < 1.0)) throw ConfigError("expectile tau must lie strictly inside (0,1)");
  if (net_.spec().output_dim != 1) throw ConfigError("ValueNet: output_dim must be 1");
}

Vector ValueNet::evaluate(const Matrix& states) const { return net_.forward(states).row(0).transpose(); }

double ValueNet::loss_and_grad(const Matrix& states, const Vector& targets, ParamVector* grad) const {
  if (targets.size() != states.cols()) throw ConfigError("value loss: target count mismatch");
  MlpTape tape;
  const Matrix v = net_.forward(states, tape);
  const double B = static_cast<double>(states.cols());
  double loss = 0.0;
  Matrix up(1, states.cols());
  for (Eigen::Index b = 0; b < states.cols(); ++b) {
    const double delta = targets[b] - v(0, b);
    loss += expectile_loss(delta, tau_) / B;
    up(0, b) = -expectile_loss_grad(delta, tau_) / B;
  }
  if (grad && std::isfinite(loss)) net_.backward(tape, up, *grad);
  return loss;
}

double ValueNet::update(const Matrix& states, const Vector& targets) {
  ParamVector g = net_.zero_grad();
  const double loss = loss_and_grad(states, targets, &g);
  if (!std::isfinite(loss) || !g.all_finite()) throw NumericalError("value loss is not finite");
  opt_.step(net_.params(), g);
  return loss;
}

void ValueNet::save(Checkpoint& ckpt, const std::string& name) const {
  nlohmann::json spec = net_.spec();
  spec["expectile_tau"] = tau_;
  ckpt.add(name, "value", spec, net_.params());
}

ValueNet ValueNet::load(const Checkpoint& ckpt, const std::string& name, AdamConfig adam) {
  const auto& e = ckpt.get(name);
  MlpSpec spec;
  double tau = 0.0;
  try {
    spec = e.spec.get<MlpSpec>();
    tau = e.spec.at("expectile_tau").get<double>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError("bad format: value spec for '" + name + "': " + ex.what());
  }
  expect_layout(e, *mlp_layout(spec));
  return ValueNet(Mlp(spec, e.params), tau, adam);
}

Vector advantage(const CriticEnsemble& critics, const ValueNet& value, const Matrix& states, const Matrix& actions) {
  return critics.q_min_target(states, actions) - value.evaluate(states);
}

}  // namespace gem
