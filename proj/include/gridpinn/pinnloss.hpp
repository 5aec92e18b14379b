// SPDX-License-Identifier: Apache-2.0
//
// Loss terms of the physics-informed objective. The network sees the
// normalized initial state and normalized time tau = t / t_end and returns
// a normalized state y; the physical prediction is center + scale .* y.
// All residuals are measured in those normalized units.

#pragma once

#include "gridpinn/core.hpp"
#include "gridpinn/mlp.hpp"
#include "gridpinn/odesolve.hpp"
#include "gridpinn/psmodels.hpp"
#include "gridpinn/rng.hpp"
#include "gridpinn/tape.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>

namespace gridpinn::pinn {

/// Affine maps between physical and network coordinates.
struct Normalizer {
  Vector center;       // physical state mapped to zero
  Vector input_scale;  // IC feature = (x0 - center) / input_scale
  Vector output_scale; // x_hat = center + output_scale .* y
  double t_end = 1.0;

  Index state_dim() const { return center.size(); }
  void validate() const;

  /// Network input rows: normalized IC, then tau.
  Matrix features(const Eigen::Ref<const Matrix>& ics) const;
  Matrix encode(const Eigen::Ref<const Matrix>& states) const;
  Matrix decode(const Eigen::Ref<const Matrix>& y) const;
};

nlohmann::json to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& j);

/// Network plus its coordinate maps: x_hat(t; x0).
struct StateNet {
  nn::Mlp net;
  Normalizer norm;

  /// Predicted states at `times` for one initial state (state_dim x n).
  Matrix predict(const Eigen::Ref<const Vector>& x0,
                 const Eigen::Ref<const Vector>& times) const;
  /// Prediction and time derivative in physical units.
  std::pair<Matrix, Matrix> predict_with_rate(
      const Eigen::Ref<const Vector>& x0,
      const Eigen::Ref<const Vector>& times) const;
};

/// Builds a network whose input and output sizes fit `norm`.
nn::MlpConfig state_net_config(const Normalizer& norm, int hidden_layers,
                               Index hidden_width, std::uint64_t seed,
                               std::uint64_t stream);

struct CollocationSet {
  Vector times;
  double t_end = 0.0;

  Index size() const { return times.size(); }
};

CollocationSet sample_collocation(Index n_ode, double t_end, CounterRng& rng);

struct LossWeights {
  double ic = 1.0;
  double ode = 1.0;
  double sol = 0.0;

  void validate() const;
};

struct LossBreakdown {
  double l_ic = 0.0;
  double l_ode = 0.0;
  double l_sol = 0.0;
  double total = 0.0;
};

enum class Reduction { mean_square, max_square };

std::string to_string(Reduction r);
Reduction reduction_from_string(const std::string& s);

/// Ground truth on a common grid: states(k) is state_dim x times.size() for
/// initial state ics.col(k).
struct SupervisedData {
  Matrix ics;
  Vector times;
  std::vector<Matrix> states;
};

/// Aligns trajectories to `times` with sample_at. Throws RangeError when the
/// grid leaves a trajectory's range.
SupervisedData align_truth(const std::vector<ode::Trajectory>& truth,
                           const models::DynamicsModel& model,
                           const Eigen::Ref<const Vector>& times);

// -- single-tape loss terms ---------------------------------------------------

/// sum_k ||y(0; x0_k) - encode(x0_k)||^2 / n_ic.
nn::NodeId record_ic_loss(nn::Tape& tape, const StateNet& sn,
                          const Eigen::Ref<const Matrix>& ics,
                          Reduction reduction = Reduction::mean_square);

/// Mean over (IC, collocation) pairs of ||dy/dtau - t_end f(x_hat) / scale||^2.
/// `divisor` overrides the pair count (used when a sum is split in chunks).
nn::NodeId record_ode_loss(nn::Tape& tape, const StateNet& sn,
                           const models::DynamicsModel& model,
                           const CollocationSet& coll,
                           const Eigen::Ref<const Matrix>& ics,
                           Reduction reduction = Reduction::mean_square,
                           std::optional<double> divisor = std::nullopt);

/// Mean over (trajectory, grid point) of the squared normalized deviation.
nn::NodeId record_supervised_loss(nn::Tape& tape, const StateNet& sn,
                                  const SupervisedData& truth,
                                  Reduction reduction = Reduction::mean_square);

double ic_loss(const StateNet& sn, const Eigen::Ref<const Matrix>& ics);
double ode_residual_loss(const StateNet& sn, const models::DynamicsModel& model,
                         const CollocationSet& coll,
                         const Eigen::Ref<const Matrix>& ics);
double supervised_loss(const StateNet& sn, const SupervisedData& truth);

struct RecordedLoss {
  nn::NodeId root;
  LossBreakdown breakdown;
};

/// All active terms and their weighted sum on one tape.
RecordedLoss total_loss(nn::Tape& tape, const LossWeights& weights,
                        const StateNet& sn, const models::DynamicsModel& model,
                        const CollocationSet& coll,
                        const Eigen::Ref<const Matrix>& ics,
                        const SupervisedData* truth = nullptr);

// -- full-batch objective -------------------------------------------------------

struct TermGradients {
  LossBreakdown values;  // total left at zero
  Vector g_ic;
  Vector g_ode;
  Vector g_sol;  // empty when no supervised data

  /// sum_i lambda_i g_i and the matching weighted value.
  Vector combine(const LossWeights& w) const;
  double weighted(const LossWeights& w) const;
};

struct ObjectiveOptions {
  Reduction reduction = Reduction::mean_square;
  Index columns_per_chunk = 250;  // collocation points per ODE tape
  int threads = 1;
};

/// Per-term values and gradients over the full training set. The ODE term
/// is split into chunks of one IC and a slice of the collocation set,
/// evaluated independently and summed in chunk order, so results do not
/// depend on the thread count.
class PinnObjective {
 public:
  PinnObjective(std::shared_ptr<const models::DynamicsModel> model, Matrix ics,
                CollocationSet coll, ObjectiveOptions options = {});

  void set_supervised(SupervisedData truth);
  void set_collocation(CollocationSet coll);

  const Matrix& ics() const { return ics_; }
  const CollocationSet& collocation() const { return coll_; }
  const models::DynamicsModel& model() const { return *model_; }
  bool has_supervised() const { return truth_.has_value(); }

  TermGradients gradients(const StateNet& sn) const;
  LossBreakdown values(const StateNet& sn) const;

  /// Single terms; the gradient is left empty when `with_grad` is false.
  std::pair<double, Vector> ic_term(const StateNet& sn, bool with_grad) const;
  std::pair<double, Vector> ode_term(const StateNet& sn, bool with_grad) const;

 private:

  std::shared_ptr<const models::DynamicsModel> model_;
  Matrix ics_;
  CollocationSet coll_;
  ObjectiveOptions options_;
  std::optional<SupervisedData> truth_;
};

}  // namespace gridpinn::pinn
