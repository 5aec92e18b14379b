// SPDX-License-Identifier: Apache-2.0
//
// Small models with closed-form behavior shared by the unit tests.

#pragma once

#include "gridpinn/mlp.hpp"
#include "gridpinn/pinnloss.hpp"
#include "gridpinn/psmodels.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <optional>

namespace gridpinn::testing {

/// x' = -rate x, componentwise.
inline std::shared_ptr<const models::DynamicsModel> decay_model(Index dim = 1, double rate = 1.0) {
  return models::make_model("decay", dim, [rate](const auto& x, double) { return (-rate * x).eval(); });
}

/// Damped nonlinear oscillator with two states.
inline std::shared_ptr<const models::DynamicsModel> toy2_model() {
  return models::make_model("toy2", 2, [](const auto& x, double) {
    using std::sin;
    using Scalar = typename std::decay_t<decltype(x)>::Scalar;
    VectorX<Scalar> f(2);
    f(0) = x(1);
    f(1) = -sin(x(0)) - 0.3 * x(1);
    return f;
  });
}

/// x' = diag(rates) x.
inline std::shared_ptr<const models::DynamicsModel> diagonal_model(Vector rates) {
  const Index n = rates.size();
  return models::make_model("diagonal", n, [rates](const auto& x, double) {
    auto f = x.eval();
    for (Index i = 0; i < f.size(); ++i) f(i) = rates(i) * x(i);
    return f;
  });
}

/// Loss builder over a StateNet wrapper. The wrapper is kept alive until the
/// next call because the tape points into its parameters.
inline nn::LossBuilder state_loss(
    pinn::Normalizer norm,
    std::function<nn::NodeId(nn::Tape&, const pinn::StateNet&)> record) {
  auto holder = std::make_shared<std::optional<pinn::StateNet>>();
  return [holder, norm = std::move(norm), record = std::move(record)](
             nn::Tape& tape, const nn::Mlp& net) {
    holder->emplace(pinn::StateNet{net, norm});
    return record(tape, **holder);
  };
}

}  // namespace gridpinn::testing
