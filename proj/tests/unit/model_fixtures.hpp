#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gem/cgmm.hpp"

namespace gem::testing {

inline CgmmSpec spec_of(std::size_t K, std::size_t S, std::size_t A, std::vector<std::size_t> hidden = {8}) {
  CgmmSpec s;
  s.state_dim = S;
  s.action_dim = A;
  s.K = K;
  s.hidden = std::move(hidden);
  return s;
}

// State-independent mixture: the last layer of both nets is zeroed and its
// bias carries the desired logits / pre-squash means.
inline Cgmm constant_model(const Vector& logits, const Matrix& mu, const Matrix& log_std, std::size_t S = 1) {
  const auto K = static_cast<std::size_t>(logits.size());
  const auto A = static_cast<std::size_t>(mu.rows());
  Cgmm m(spec_of(K, S, A), 3);
  const std::string last = std::to_string(m.spec().hidden.size());
  for (double& w : m.mutable_gating_net().params().segment("W" + last)) w = 0.0;
  for (double& w : m.mutable_mean_net().params().segment("W" + last)) w = 0.0;
  auto gb = m.mutable_gating_net().params().segment("b" + last);
  for (std::size_t k = 0; k < K; ++k) gb[k] = logits[static_cast<Eigen::Index>(k)];
  auto mb = m.mutable_mean_net().params().segment("b" + last);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t d = 0; d < A; ++d)
      mb[k * A + d] = std::atanh(mu(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)));
  auto ls = m.mutable_log_std().values();
  for (std::size_t i = 0; i < ls.size(); ++i) ls[i] = log_std.data()[i];
  return m;
}

}  // namespace gem::testing
