#include "gem/adam.hpp"

#include <cmath>

#include "gem/error.hpp"

namespace gem {

Adam::Adam(AdamConfig config, const ParamVector& params)
    : config_(config), m_(params.size(), 0.0), v_(params.size(), 0.0) {}

bool Adam::step(ParamVector& params, const ParamVector& grads) {
  if (params.size() != m_.size() || !params.same_layout(grads)) {
    throw ConfigError("Adam::step: parameter/gradient shape mismatch");
  }
  if (!grads.all_finite()) return false;

  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const double g = grads[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
  return true;
}

}  // namespace gem
