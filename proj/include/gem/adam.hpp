#pragma once

#include <cstdint>
#include <vector>

#include "gem/param_vector.hpp"

namespace gem {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam optimizer state for one ParamVector.
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig config, const ParamVector& params);

  /// Applies one bias-corrected Adam update. Non-finite gradients leave both
  /// the parameters and the optimizer state untouched and return false.
  bool step(ParamVector& params, const ParamVector& grads);

  std::uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace gem
