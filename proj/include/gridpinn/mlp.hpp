// SPDX-License-Identifier: Apache-2.0
//
// Fully connected tanh network stored as one flat parameter vector.
// Layer l owns a weight block (out x in, column-major) followed by its bias;
// layers appear in order. That layout is the canonical parameter order.

#pragma once

#include "gridpinn/core.hpp"
#include "gridpinn/rng.hpp"
#include "gridpinn/tape.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

namespace gridpinn::nn {

struct MlpConfig {
  Index input_dim = 1;
  Index output_dim = 1;
  int hidden_layers = 4;
  Index hidden_width = 64;
  std::uint64_t seed = 0;
  std::uint64_t stream = streams::kMainNet;

  void validate() const;
};

/// Entries uniform on [-L, L] with L = sqrt(6 / (fan_in + fan_out)). The
/// result is fan_out x fan_in, filled column by column.
Matrix glorot_init(Index fan_in, Index fan_out, CounterRng& rng);

class Mlp {
 public:
  /// Glorot weights and zero biases drawn from CounterRng(seed, stream).
  explicit Mlp(const MlpConfig& config);
  Mlp(const MlpConfig& config, Vector params);

  const MlpConfig& config() const { return config_; }
  Index n_params() const { return params_.size(); }
  int n_layers() const { return static_cast<int>(layers_.size()); }

  const Vector& params() const { return params_; }
  void set_params(const Eigen::Ref<const Vector>& p);
  Vector& mutable_params() { return params_; }

  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<const Vector> bias(int layer) const;
  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<Vector> bias(int layer);

  /// Columns of `input` are samples. Hidden layers use tanh, the last layer
  /// is affine.
  Matrix forward(const Eigen::Ref<const Matrix>& input) const;

  /// Records the forward pass on `tape` starting from node `input`. The tape
  /// keeps pointers into params(); do not modify them while it is alive.
  NodeId record(Tape& tape, NodeId input) const;

 private:
  struct Layer {
    Index rows;
    Index cols;
    Index w_offset;
    Index b_offset;
  };

  void build_layout();
  ParamRef weight_ref(const Layer& l) const;
  ParamRef bias_ref(const Layer& l) const;

  MlpConfig config_;
  std::vector<Layer> layers_;
  Vector params_;
};

/// Outputs and their derivative with respect to the input row `time_row`,
/// one column per sample.
struct TimeGrad {
  Matrix value;
  Matrix rate;
};

TimeGrad forward_with_time_grad(const Mlp& net,
                                const Eigen::Ref<const Matrix>& input,
                                Index time_row);

/// Builds a scalar loss on a fresh tape for the given network.
using LossBuilder = std::function<NodeId(Tape&, const Mlp&)>;

/// Value and parameter gradient of the loss defined by `build`.
std::pair<double, Vector> value_and_gradient(const Mlp& net,
                                             const LossBuilder& build);

/// Five-point central differences of the loss in every parameter.
Vector finite_difference_gradient(const Mlp& net, const LossBuilder& build,
                                  double step);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_relative_error(const Eigen::Ref<const Vector>& a,
                          const Eigen::Ref<const Vector>& b,
                          double floor = 1e-12);

/// Compares the reverse-mode gradient with finite_difference_gradient and
/// returns the worst relative discrepancy. A supplied `gradient` replaces
/// the tape result.
double gradient_check(const Mlp& net, const LossBuilder& build, double step,
                      const Vector* gradient = nullptr, double floor = 1e-12);

nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace gridpinn::nn
