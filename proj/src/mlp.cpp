// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/mlp.hpp"

#include "gridpinn/activation.hpp"

#include <cmath>

namespace gridpinn::nn {

void MlpConfig::validate() const {
  if (input_dim <= 0 || output_dim <= 0) throw ContractError("mlp: dimensions must be positive");
  if (hidden_layers < 0) throw ContractError("mlp: negative hidden layer count");
  if (hidden_layers > 0 && hidden_width <= 0) throw ContractError("mlp: hidden width must be positive");
}

Matrix glorot_init(Index fan_in, Index fan_out, CounterRng& rng) {
  if (fan_in <= 0 || fan_out <= 0) throw ContractError("glorot_init: fans must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_out, fan_in);
  for (Index j = 0; j < fan_in; ++j) {
    for (Index i = 0; i < fan_out; ++i) w(i, j) = rng.uniform(-limit, limit);
  }
  return w;
}

Mlp::Mlp(const MlpConfig& config) : config_(config) {
  config_.validate();
  build_layout();
  params_ = Vector::Zero(params_.size());
  CounterRng rng(config_.seed, config_.stream);
  for (int l = 0; l < n_layers(); ++l) {
    weight(l) = glorot_init(layers_[l].cols, layers_[l].rows, rng);
  }
}

Mlp::Mlp(const MlpConfig& config, Vector params) : config_(config) {
  config_.validate();
  build_layout();
  if (params.size() != params_.size()) throw ShapeError("mlp: parameter vector length mismatch");
  params_ = std::move(params);
}

void Mlp::build_layout() {
  layers_.clear();
  Index in = config_.input_dim;
  Index offset = 0;
  auto add = [&](Index out) {
    Layer l{out, in, offset, offset + out * in};
    offset = l.b_offset + out;
    layers_.push_back(l);
    in = out;
  };
  for (int h = 0; h < config_.hidden_layers; ++h) add(config_.hidden_width);
  add(config_.output_dim);
  params_.resize(offset);
}

void Mlp::set_params(const Eigen::Ref<const Vector>& p) {
  if (p.size() != params_.size()) throw ShapeError("mlp: parameter vector length mismatch");
  params_ = p;
}

Eigen::Map<const Matrix> Mlp::weight(int layer) const {
  const Layer& l = layers_.at(static_cast<size_t>(layer));
  return {params_.data() + l.w_offset, l.rows, l.cols};
}

Eigen::Map<const Vector> Mlp::bias(int layer) const {
  const Layer& l = layers_.at(static_cast<size_t>(layer));
  return {params_.data() + l.b_offset, l.rows};
}

Eigen::Map<Matrix> Mlp::weight(int layer) {
  const Layer& l = layers_.at(static_cast<size_t>(layer));
  return {params_.data() + l.w_offset, l.rows, l.cols};
}

Eigen::Map<Vector> Mlp::bias(int layer) {
  const Layer& l = layers_.at(static_cast<size_t>(layer));
  return {params_.data() + l.b_offset, l.rows};
}

ParamRef Mlp::weight_ref(const Layer& l) const {
  return {params_.data() + l.w_offset, l.rows, l.cols, l.w_offset};
}

ParamRef Mlp::bias_ref(const Layer& l) const {
  return {params_.data() + l.b_offset, l.rows, 1, l.b_offset};
}

Matrix Mlp::forward(const Eigen::Ref<const Matrix>& input) const {
  if (input.rows() != config_.input_dim) throw ShapeError("mlp: input rows mismatch");
  Matrix h = input;
  for (int l = 0; l < n_layers(); ++l) {
    Matrix z = weight(l) * h;
    z.colwise() += bias(l);
    if (l + 1 < n_layers()) z = tanh_matrix(z);
    h = std::move(z);
  }
  return h;
}

NodeId Mlp::record(Tape& tape, NodeId input) const {
  if (tape.n_params() != n_params()) throw ShapeError("mlp: tape sized for another network");
  if (tape.value(input).rows() != config_.input_dim) throw ShapeError("mlp: input rows mismatch");
  NodeId h = input;
  for (int l = 0; l < n_layers(); ++l) {
    const Layer& layer = layers_[static_cast<size_t>(l)];
    h = tape.linear(h, weight_ref(layer), bias_ref(layer));
    if (l + 1 < n_layers()) h = tape.tanh(h);
  }
  return h;
}

TimeGrad forward_with_time_grad(const Mlp& net,
                                const Eigen::Ref<const Matrix>& input,
                                Index time_row) {
  if (time_row < 0 || time_row >= input.rows()) throw ShapeError("time row outside input");
  Matrix seed = Matrix::Zero(input.rows(), input.cols());
  seed.row(time_row).setOnes();
  Tape tape(net.n_params());
  const NodeId out = net.record(tape, tape.input(input, std::move(seed)));
  return {tape.value(out), tape.tangent(out)};
}

std::pair<double, Vector> value_and_gradient(const Mlp& net,
                                             const LossBuilder& build) {
  Tape tape(net.n_params());
  const NodeId root = build(tape, net);
  const double v = tape.scalar(root);
  tape.backward(root);
  return {v, tape.param_grad()};
}

namespace {

double loss_at(const Mlp& net, const LossBuilder& build) {
  Tape tape(net.n_params());
  return tape.scalar(build(tape, net));
}

}  // namespace

Vector finite_difference_gradient(const Mlp& net, const LossBuilder& build,
                                  double step) {
  if (!(step > 0.0)) throw ContractError("finite_difference_gradient: step must be positive");
  Mlp probe = net;
  Vector g(net.n_params());
  for (Index i = 0; i < net.n_params(); ++i) {
    const double x0 = net.params()(i);
    auto at = [&](double k) {
      probe.mutable_params()(i) = x0 + k * step;
      return loss_at(probe, build);
    };
    const double fp1 = at(1.0), fm1 = at(-1.0), fp2 = at(2.0), fm2 = at(-2.0);
    probe.mutable_params()(i) = x0;
    g(i) = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * step);
  }
  return g;
}

double max_relative_error(const Eigen::Ref<const Vector>& a,
                          const Eigen::Ref<const Vector>& b, double floor) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: size mismatch");
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a(i)), std::abs(b(i)), floor});
    worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
  }
  return worst;
}

double gradient_check(const Mlp& net, const LossBuilder& build, double step,
                      const Vector* gradient, double floor) {
  const Vector numeric = finite_difference_gradient(net, build, step);
  if (gradient != nullptr) return max_relative_error(*gradient, numeric, floor);
  return max_relative_error(value_and_gradient(net, build).second, numeric, floor);
}

nlohmann::json to_json(const Mlp& net) {
  const MlpConfig& c = net.config();
  return {{"input_dim", c.input_dim},
          {"output_dim", c.output_dim},
          {"hidden_layers", c.hidden_layers},
          {"hidden_width", c.hidden_width},
          {"activation", "tanh"},
          {"seed", c.seed},
          {"stream", c.stream},
          {"params", std::vector<double>(net.params().data(),
                                         net.params().data() + net.n_params())}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("activation").get<std::string>() != "tanh") {
      throw ConfigError("mlp: unsupported activation");
    }
    MlpConfig c;
    c.input_dim = j.at("input_dim").get<Index>();
    c.output_dim = j.at("output_dim").get<Index>();
    c.hidden_layers = j.at("hidden_layers").get<int>();
    c.hidden_width = j.at("hidden_width").get<Index>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.stream = j.at("stream").get<std::uint64_t>();
    const auto p = j.at("params").get<std::vector<double>>();
    return Mlp(c, Eigen::Map<const Vector>(p.data(), static_cast<Index>(p.size())));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mlp: malformed network record: ") + e.what());
  }
}

}  // namespace gridpinn::nn
