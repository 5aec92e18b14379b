// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/seqroll.hpp"


#include <cmath>
#include <sstream>

namespace gridpinn::seq {

void StepNetConfig::validate(double horizon) const {
  if (!(delta_t > 0.0) || !(delta_t <= horizon)) {
    throw ConfigError("seq2seq: delta_t must lie in (0, t_end]");
  }
  if (hidden_layers < 1 || hidden_width < 1 || n_ode < 1) {
    throw ConfigError("seq2seq: step network sizes must be positive");
  }
}

train::TrainResult train_step_net(std::shared_ptr<const models::DynamicsModel> model,
                                  const Matrix& ics, const pinn::Normalizer& norm,
                                  const StepNetConfig& config,
                                  train::TrainOptions options,
                                  const train::Progress& progress) {
  config.validate(norm.t_end);
  pinn::Normalizer step_norm = norm;
  step_norm.t_end = config.delta_t;
  options.hidden_layers = config.hidden_layers;
  options.hidden_width = config.hidden_width;
  options.n_ode = config.n_ode;
  return train::train_state_net(std::move(model), ics, step_norm, options, progress);
}

ode::Trajectory rollout(const StepMap& step, const Eigen::Ref<const Vector>& x0,
                        double delta_t, long n_steps, std::string model_name) {
  if (n_steps < 1) throw ContractError("rollout: n_steps must be >= 1");
  if (!(delta_t > 0.0)) throw ContractError("rollout: delta_t must be positive");
  ode::Trajectory traj;
  traj.model_name = std::move(model_name);
  traj.times.resize(n_steps + 1);
  traj.states.resize(x0.size(), n_steps + 1);
  traj.times(0) = 0.0;
  traj.states.col(0) = x0;
  Vector x = x0;
  for (long k = 1; k <= n_steps; ++k) {
    x = step(x);
    const double t = static_cast<double>(k) * delta_t;
    if (x.size() != x0.size()) throw ShapeError("rollout: step map changed the state size");
    if (!x.allFinite()) {
      std::ostringstream msg;
      msg << "rollout: non-finite prediction at step " << k;
      throw DivergenceError(msg.str(), t);
    }
    traj.times(k) = t;
    traj.states.col(k) = x;
  }
  return traj;
}

ode::Trajectory rollout(const pinn::StateNet& step_net,
                        const Eigen::Ref<const Vector>& x0, double delta_t,
                        long n_steps) {
  if (!(delta_t <= step_net.norm.t_end)) {
    throw ContractError("rollout: delta_t exceeds the network's trained horizon");
  }
  const Vector at = Vector::Constant(1, delta_t);
  return rollout([&](const Vector& x) -> Vector { return step_net.predict(x, at).col(0); },
                 x0, delta_t, n_steps);
}

}  // namespace gridpinn::seq
