// SPDX-License-Identifier: Apache-2.0
//
// Sequence-to-sequence mode: a network trained on [0, dt] only, chained by
// feeding each prediction back as the next initial state.

#pragma once

#include "gridpinn/core.hpp"
#include "gridpinn/odesolve.hpp"
#include "gridpinn/pinnloss.hpp"
#include "gridpinn/training.hpp"

#include <functional>
#include <memory>

namespace gridpinn::seq {

struct StepNetConfig {
  double delta_t = 0.0;
  int hidden_layers = 4;
  Index hidden_width = 64;
  Index n_ode = 100;  // collocation points on [0, delta_t]

  /// Throws ConfigError unless 0 < delta_t <= horizon and sizes are positive.
  void validate(double horizon) const;
};

/// Trains a step network with the standard cascade on t in [0, delta_t].
/// `norm` supplies the state scaling; its t_end is replaced by delta_t.
train::TrainResult train_step_net(std::shared_ptr<const models::DynamicsModel> model,
                                  const Matrix& ics, const pinn::Normalizer& norm,
                                  const StepNetConfig& config,
                                  train::TrainOptions options,
                                  const train::Progress& progress = {});

/// x_{k+1} = step(x_k).
using StepMap = std::function<Vector(const Vector& x)>;

/// States at t = k dt for k = 0..n_steps; time stamps are k * dt exactly.
/// A non-finite state throws DivergenceError at its time stamp.
ode::Trajectory rollout(const StepMap& step, const Eigen::Ref<const Vector>& x0,
                        double delta_t, long n_steps, std::string model_name = {});

/// Rollout of a trained network, evaluated at t = delta_t each step.
ode::Trajectory rollout(const pinn::StateNet& step_net,
                        const Eigen::Ref<const Vector>& x0, double delta_t,
                        long n_steps);

}  // namespace gridpinn::seq
