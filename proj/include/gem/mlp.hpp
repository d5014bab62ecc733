#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gem/param_vector.hpp"

namespace gem {

/// Column-major; in batched calls each column is one sample.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kTanh, kRelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 1;
  Activation activation = Activation::kTanh;

  void validate() const;
  std::size_t num_layers() const { return hidden.size() + 1; }
  bool operator==(const MlpSpec&) const = default;
};

void to_json(nlohmann::json& j, const MlpSpec& spec);
void from_json(const nlohmann::json& j, MlpSpec& spec);

/// Segments are W0,b0,W1,b1,...; Wl is (fan_out x fan_in), column-major.
LayoutPtr mlp_layout(const MlpSpec& spec);

/// Glorot-uniform weights, zero biases.
ParamVector mlp_init(const MlpSpec& spec, std::uint64_t seed);

/// Post-activation values of every layer, input first. Filled by forward().
struct MlpTape {
  std::vector<Matrix> activations;
};

/// Small fully-connected network with a linear output layer.
///
/// Forward passes are const and may run concurrently on the same instance;
/// backward() only writes into the caller-owned gradient.
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, std::uint64_t seed);
  Mlp(MlpSpec spec, ParamVector params);

  const MlpSpec& spec() const { return spec_; }
  const ParamVector& params() const { return params_; }
  ParamVector& params() { return params_; }
  ParamVector zero_grad() const { return ParamVector::zeros_like(params_); }

  std::vector<double> forward(std::span<const double> x) const;
  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, MlpTape& tape) const;

  /// Accumulates d(sum(grad_out .* output))/d(params) into `grad` and returns
  /// the gradient with respect to the input batch.
  Matrix backward(const MlpTape& tape, const Matrix& grad_out, ParamVector& grad) const;

 private:
  void check_input(Eigen::Index rows) const;

  MlpSpec spec_;
  ParamVector params_;
};

struct MlpGradient {
  ParamVector params;
  std::vector<double> input;
};

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> x);

MlpGradient mlp_backward(const MlpSpec& spec, const ParamVector& params,
                         std::span<const double> x, std::span<const double> grad_out);

}  // namespace gem
