// SPDX-License-Identifier: Apache-2.0
//
// Full training cascade for one state network: auxiliary single-objective
// nets, loss-weight initialization, Adam with periodic rebalancing, then
// L-BFGS with the weights frozen.

#pragma once

#include "gridpinn/core.hpp"
#include "gridpinn/lossbalance.hpp"
#include "gridpinn/optimizers.hpp"
#include "gridpinn/pinnloss.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace gridpinn::train {

struct TrainOptions {
  int hidden_layers = 4;
  Index hidden_width = 64;
  Index n_ode = 1000;
  long adam_epochs = 20000;
  long lbfgs_iterations = 5000;
  opt::LrSchedule lr;
  opt::LbfgsOptions lbfgs;
  balance::BalanceConfig balance;
  pinn::ObjectiveOptions objective;
  bool resample_collocation = false;  // fresh collocation draw every Adam epoch
  std::uint64_t seed = 0;
  std::uint64_t net_stream = streams::kMainNet;

  void validate() const;
};

/// One row of the loss log. For L-BFGS rows `lr` holds the accepted step.
struct EpochRecord {
  long epoch = 0;
  std::string phase;  // "adam" or "lbfgs"
  pinn::LossBreakdown values;
  pinn::LossWeights weights;
  double lr = 0.0;
};

struct TrainResult {
  explicit TrainResult(pinn::StateNet trained) : net(std::move(trained)) {}

  pinn::StateNet net;
  std::vector<EpochRecord> log;
  Eigen::Matrix2d utopia_table = Eigen::Matrix2d::Zero();
  Eigen::Vector2d utopia = Eigen::Vector2d::Zero();
  Eigen::Vector2d nadir = Eigen::Vector2d::Zero();
  long aux_epochs_ic = 0;
  long aux_epochs_ode = 0;
  pinn::LossWeights initial_weights;
  pinn::LossWeights final_weights;
  std::vector<balance::RebalanceRecord> rebalance;
  long lbfgs_fallbacks = 0;
  long lbfgs_skipped_pairs = 0;
  std::vector<std::string> warnings;
  double seconds_auxiliary = 0.0;
  double seconds_adam = 0.0;
  double seconds_lbfgs = 0.0;
};

/// Raised when a loss or gradient turns non-finite; carries the last
/// parameters whose loss was finite.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, long epoch, pinn::StateNet last_good,
                   pinn::LossWeights weights)
      : NumericalError(what, epoch), last_good_(std::move(last_good)), weights_(weights) {}

  const pinn::StateNet& last_good() const { return last_good_; }
  const pinn::LossWeights& weights() const { return weights_; }

 private:
  pinn::StateNet last_good_;
  pinn::LossWeights weights_;
};

/// Called after every logged row; used for progress output.
using Progress = std::function<void(const EpochRecord&)>;

TrainResult train_state_net(std::shared_ptr<const models::DynamicsModel> model,
                            const Matrix& ics, const pinn::Normalizer& norm,
                            const TrainOptions& options,
                            const Progress& progress = {});

/// CSV `epoch,l_ic,l_ode,l_sol,lambda_ic,lambda_ode,total,lr`.
void write_loss_log(const std::vector<EpochRecord>& log,
                    const std::filesystem::path& path);

}  // namespace gridpinn::train
