#include "gem/mlp.hpp"

#include <cmath>
#include <random>

#include "gem/error.hpp"

namespace gem {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

std::size_t fan_in(const MlpSpec& spec, std::size_t layer) {
  return layer == 0 ? spec.input_dim : spec.hidden[layer - 1];
}

std::size_t fan_out(const MlpSpec& spec, std::size_t layer) {
  return layer == spec.hidden.size() ? spec.output_dim : spec.hidden[layer];
}

std::string weight_name(std::size_t l) { return "W" + std::to_string(l); }
std::string bias_name(std::size_t l) { return "b" + std::to_string(l); }

void apply_activation(Activation act, Matrix& z) {
  if (act == Activation::kTanh) {
    z = z.array().tanh().matrix();
  } else {
    z = z.cwiseMax(0.0);
  }
}

// Derivative expressed through the post-activation value.
void multiply_activation_grad(Activation act, const Matrix& post, Matrix& delta) {
  if (act == Activation::kTanh) {
    delta.array() *= (1.0 - post.array().square());
  } else {
    delta.array() *= (post.array() > 0.0).cast<double>();
  }
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

void MlpSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) throw ConfigError("MlpSpec: dimensions must be >= 1");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("MlpSpec: hidden widths must be >= 1");
  }
}

void to_json(nlohmann::json& j, const MlpSpec& spec) {
  j = nlohmann::json{{"input_dim", spec.input_dim},
                     {"hidden", spec.hidden},
                     {"output_dim", spec.output_dim},
                     {"activation", to_string(spec.activation)}};
}

void from_json(const nlohmann::json& j, MlpSpec& spec) {
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  spec.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  spec.output_dim = j.at("output_dim").get<std::size_t>();
  spec.activation = activation_from_string(j.at("activation").get<std::string>());
}

LayoutPtr mlp_layout(const MlpSpec& spec) {
  spec.validate();
  std::vector<ParamLayout::SegmentShape> shapes;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    shapes.push_back({weight_name(l), fan_out(spec, l), fan_in(spec, l)});
    shapes.push_back({bias_name(l), fan_out(spec, l), 1});
  }
  return make_layout(shapes);
}

ParamVector mlp_init(const MlpSpec& spec, std::uint64_t seed) {
  ParamVector params(mlp_layout(spec));
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in(spec, l) + fan_out(spec, l)));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : params.segment(weight_name(l))) w = dist(rng);
  }
  return params;
}

Mlp::Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)), params_(mlp_init(spec_, seed)) {}

Mlp::Mlp(MlpSpec spec, ParamVector params) : spec_(std::move(spec)), params_(std::move(params)) {
  if (!(params_.layout() == *mlp_layout(spec_))) {
    throw ConfigError("Mlp: parameter layout does not match spec");
  }
}

void Mlp::check_input(Eigen::Index rows) const {
  if (static_cast<std::size_t>(rows) != spec_.input_dim) {
    throw ConfigError("Mlp: input has dimension " + std::to_string(rows) + ", expected " +
                      std::to_string(spec_.input_dim));
  }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  Matrix in = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
  Matrix out = forward(in);
  return std::vector<double>(out.data(), out.data() + out.size());
}

Matrix Mlp::forward(const Matrix& x) const {
  check_input(x.rows());
  Matrix a = x;
  const auto& layout = params_.layout();
  const std::size_t layers = spec_.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const Segment& ws = layout.segments()[2 * l];
    const Segment& bs = layout.segments()[2 * l + 1];
    ConstMap w(params_.data() + ws.offset, ws.rows, ws.cols);
    Eigen::Map<const Vector> b(params_.data() + bs.offset, bs.rows);
    Matrix z = w * a;
    z.colwise() += b;
    if (l + 1 < layers) apply_activation(spec_.activation, z);
    a = std::move(z);
  }
  return a;
}

Matrix Mlp::forward(const Matrix& x, MlpTape& tape) const {
  check_input(x.rows());
  const auto& layout = params_.layout();
  const std::size_t layers = spec_.num_layers();
  tape.activations.resize(layers + 1);
  tape.activations[0] = x;
  for (std::size_t l = 0; l < layers; ++l) {
    const Segment& ws = layout.segments()[2 * l];
    const Segment& bs = layout.segments()[2 * l + 1];
    ConstMap w(params_.data() + ws.offset, ws.rows, ws.cols);
    Eigen::Map<const Vector> b(params_.data() + bs.offset, bs.rows);
    Matrix z = w * tape.activations[l];
    z.colwise() += b;
    if (l + 1 < layers) apply_activation(spec_.activation, z);
    tape.activations[l + 1] = std::move(z);
  }
  return tape.activations.back();
}

Matrix Mlp::backward(const MlpTape& tape, const Matrix& grad_out, ParamVector& grad) const {
  const std::size_t layers = spec_.num_layers();
  if (tape.activations.size() != layers + 1) throw ConfigError("Mlp::backward: tape is empty");
  if (static_cast<std::size_t>(grad_out.rows()) != spec_.output_dim ||
      grad_out.cols() != tape.activations[0].cols()) {
    throw ConfigError("Mlp::backward: grad_out shape mismatch");
  }
  if (!grad.same_layout(params_)) throw ConfigError("Mlp::backward: gradient layout mismatch");
  if (!grad_out.allFinite()) throw NumericalError("Mlp::backward: non-finite grad_out");

  const auto& layout = params_.layout();
  Matrix delta = grad_out;
  for (std::size_t l = layers; l-- > 0;) {
    const Segment& ws = layout.segments()[2 * l];
    const Segment& bs = layout.segments()[2 * l + 1];
    ConstMap w(params_.data() + ws.offset, ws.rows, ws.cols);
    MutMap gw(grad.data() + ws.offset, ws.rows, ws.cols);
    Eigen::Map<Vector> gb(grad.data() + bs.offset, bs.rows);
    gw.noalias() += delta * tape.activations[l].transpose();
    gb += delta.rowwise().sum();
    Matrix prev = w.transpose() * delta;
    if (l > 0) multiply_activation_grad(spec_.activation, tape.activations[l], prev);
    delta = std::move(prev);
  }
  return delta;
}

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                std::span<const double> x) {
  return Mlp(spec, params).forward(x);
}

MlpGradient mlp_backward(const MlpSpec& spec, const ParamVector& params,
                         std::span<const double> x, std::span<const double> grad_out) {
  Mlp net(spec, params);
  if (grad_out.size() != spec.output_dim) throw ConfigError("mlp_backward: grad_out length mismatch");
  Matrix in = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
  MlpTape tape;
  net.forward(in, tape);
  Matrix g = Eigen::Map<const Matrix>(grad_out.data(), static_cast<Eigen::Index>(grad_out.size()), 1);
  MlpGradient out{net.zero_grad(), {}};
  Matrix dx = net.backward(tape, g, out.params);
  out.input.assign(dx.data(), dx.data() + dx.size());
  return out;
}

}  // namespace gem
