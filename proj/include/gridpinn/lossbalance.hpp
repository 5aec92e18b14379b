// SPDX-License-Identifier: Apache-2.0
//
// Loss-weight initialization from single-objective auxiliary networks
// (Utopia and Nadir points) and gradient-norm rebalancing during training.

#pragma once

#include "gridpinn/core.hpp"
#include "gridpinn/mlp.hpp"
#include "gridpinn/optimizers.hpp"
#include "gridpinn/pinnloss.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace gridpinn::balance {

/// Training stops once (L[e - window] - L[e]) / L[e - window] < tolerance.
struct PlateauRule {
  long window = 200;
  double tolerance = 1e-4;
};

struct BalanceConfig {
  long aux_epochs = 2000;
  int aux_layers = 2;
  Index aux_width = 32;
  long rebalance_period = 100;
  double alpha = 0.9;
  PlateauRule plateau;

  void validate() const;
};

enum class Term { ic, ode };

std::string to_string(Term t);

struct AuxiliaryResult {
  nn::Mlp net;
  double loss = 0.0;  // re-evaluated at the final parameters
  long epochs = 0;
  bool plateaued = false;
  std::vector<double> trace;  // loss before each update
};

/// Minimizes one loss term alone with Adam on a small network. A non-finite
/// loss throws NumericalError.
AuxiliaryResult train_auxiliary(const pinn::PinnObjective& objective,
                                const pinn::Normalizer& norm, Term term,
                                const BalanceConfig& config,
                                const opt::LrSchedule& schedule,
                                std::uint64_t seed);

/// Cross-evaluation of the two auxiliary optima: table(i, j) = L_i(theta_j),
/// index 0 = IC, 1 = ODE.
struct UtopiaResult {
  nn::Mlp ic_net;
  nn::Mlp ode_net;
  Eigen::Matrix2d table = Eigen::Matrix2d::Zero();
  long ic_epochs = 0;
  long ode_epochs = 0;

  Eigen::Vector2d utopia() const { return table.diagonal(); }
};

UtopiaResult compute_utopia(const pinn::PinnObjective& objective,
                            const pinn::Normalizer& norm,
                            const BalanceConfig& config,
                            const opt::LrSchedule& schedule,
                            std::uint64_t seed, int threads = 1);

/// Row-wise maximum of the cross-evaluation table.
Eigen::Vector2d nadir_point(const Eigen::Matrix2d& table);
inline Eigen::Vector2d nadir_point(const UtopiaResult& u) { return nadir_point(u.table); }

/// lambda_i = 1 / (nadir_i - utopia_i); gaps below 1e-12 give lambda_i = 1
/// and append a message to `warnings` when given.
pinn::LossWeights init_weights(const Eigen::Vector2d& utopia,
                               const Eigen::Vector2d& nadir,
                               std::vector<std::string>* warnings = nullptr);

/// target_i = sum_j norms_j / norms_i, lambda_i <- alpha lambda_i +
/// (1 - alpha) target_i. Zero-norm terms keep their weight; all-zero norms
/// leave lambda unchanged.
Vector adaptive_rebalance(const Eigen::Ref<const Vector>& grad_norms,
                          const Eigen::Ref<const Vector>& lambda, double alpha);

struct RebalanceRecord {
  long epoch = 0;
  Eigen::Vector2d grad_norms = Eigen::Vector2d::Zero();
  Eigen::Vector2d lambda = Eigen::Vector2d::Zero();
};

nlohmann::json balance_report(const Eigen::Vector2d& utopia,
                              const Eigen::Vector2d& nadir,
                              const pinn::LossWeights& initial,
                              const std::vector<RebalanceRecord>& trace);

}  // namespace gridpinn::balance
