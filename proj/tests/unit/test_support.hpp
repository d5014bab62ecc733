#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "gem/param_vector.hpp"

namespace gem::testing {

inline double rel_err(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

inline double central_diff(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

/// Max relative error between `grad` and finite differences of `f` over up to
/// `probes` randomly chosen coordinates of `params` (all of them if fewer).
inline double fd_max_rel_err(ParamVector& params, const ParamVector& grad, const std::function<double()>& f,
                             std::size_t probes, std::mt19937_64& rng, std::size_t* checked = nullptr) {
  std::vector<std::size_t> idx(params.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (probes < idx.size()) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(probes);
  }
  double worst = 0.0;
  for (std::size_t i : idx) worst = std::max(worst, rel_err(grad[i], central_diff(f, params[i])));
  if (checked) *checked += idx.size();
  return worst;
}

/// Moves parameters off their initial values. Zero-initialized biases put a
/// relu unit exactly on its kink whenever the layer below is all-dead, where
/// central differences are meaningless.
inline void jitter(ParamVector& p, std::mt19937_64& rng, double scale = 0.05) {
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : p.values()) v += n(rng);
}

inline std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "gem_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace gem::testing
