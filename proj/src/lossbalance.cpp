// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/lossbalance.hpp"

#include "gridpinn/parallel.hpp"
#include "gridpinn/rng.hpp"

#include <cmath>
#include <optional>
#include <sstream>

namespace gridpinn::balance {

void BalanceConfig::validate() const {
  if (aux_epochs <= 0) throw ConfigError("balance: aux_epochs must be positive");
  if (aux_layers < 1 || aux_width < 1) throw ConfigError("balance: auxiliary net must have a hidden layer");
  if (rebalance_period < 1) throw ConfigError("balance: rebalance_period must be >= 1");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("balance: alpha must lie in [0, 1)");
  if (plateau.window < 1 || !(plateau.tolerance >= 0.0)) throw ConfigError("balance: invalid plateau rule");
}

std::string to_string(Term t) { return t == Term::ic ? "ic" : "ode"; }

namespace {

std::pair<double, Vector> term_value(const pinn::PinnObjective& objective,
                                     const pinn::StateNet& sn, Term term,
                                     bool with_grad) {
  return term == Term::ic ? objective.ic_term(sn, with_grad)
                          : objective.ode_term(sn, with_grad);
}

}  // namespace

AuxiliaryResult train_auxiliary(const pinn::PinnObjective& objective,
                                const pinn::Normalizer& norm, Term term,
                                const BalanceConfig& config,
                                const opt::LrSchedule& schedule,
                                std::uint64_t seed) {
  config.validate();
  schedule.validate();
  const std::uint64_t stream = term == Term::ic ? streams::kAuxIcNet : streams::kAuxOdeNet;
  pinn::StateNet sn{nn::Mlp(pinn::state_net_config(norm, config.aux_layers, config.aux_width,
                                                   seed, stream)),
                    norm};
  opt::AdamState adam(sn.net.n_params());
  AuxiliaryResult out{sn.net, 0.0, 0, false, {}};
  Vector params = sn.net.params();
  for (long epoch = 0; epoch < config.aux_epochs; ++epoch) {
    auto [loss, grad] = term_value(objective, sn, term, true);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "auxiliary " << to_string(term) << " training diverged at epoch " << epoch
          << "; lower the learning rate";
      throw NumericalError(msg.str(), epoch);
    }
    out.trace.push_back(loss);
    const long w = config.plateau.window;
    if (epoch >= w) {
      const double before = out.trace[static_cast<size_t>(epoch - w)];
      if (before > 0.0 && (before - loss) / before < config.plateau.tolerance) {
        out.plateaued = true;
        break;
      }
    }
    opt::adam_step(adam, params, grad, opt::lr_at(schedule, epoch), epoch);
    sn.net.set_params(params);
    out.epochs = epoch + 1;
  }
  out.net = sn.net;
  out.loss = term_value(objective, sn, term, false).first;
  if (!std::isfinite(out.loss)) {
    throw NumericalError("auxiliary " + to_string(term) + " training ended non-finite; lower the learning rate",
                         out.epochs);
  }
  return out;
}

UtopiaResult compute_utopia(const pinn::PinnObjective& objective,
                            const pinn::Normalizer& norm,
                            const BalanceConfig& config,
                            const opt::LrSchedule& schedule,
                            std::uint64_t seed, int threads) {
  std::vector<std::optional<AuxiliaryResult>> runs(2);
  parallel_for(2, std::min(resolve_threads(threads), 2), [&](long k) {
    runs[static_cast<size_t>(k)] = train_auxiliary(objective, norm, k == 0 ? Term::ic : Term::ode,
                                                   config, schedule, seed);
  });
  UtopiaResult u{runs[0]->net, runs[1]->net, Eigen::Matrix2d::Zero(), runs[0]->epochs, runs[1]->epochs};
  const pinn::StateNet at_ic{u.ic_net, norm};
  const pinn::StateNet at_ode{u.ode_net, norm};
  u.table(0, 0) = runs[0]->loss;
  u.table(1, 1) = runs[1]->loss;
  u.table(0, 1) = objective.ic_term(at_ode, false).first;
  u.table(1, 0) = objective.ode_term(at_ic, false).first;
  return u;
}

Eigen::Vector2d nadir_point(const Eigen::Matrix2d& table) {
  return table.rowwise().maxCoeff();
}

pinn::LossWeights init_weights(const Eigen::Vector2d& utopia,
                               const Eigen::Vector2d& nadir,
                               std::vector<std::string>* warnings) {
  double lambda[2];
  const char* names[2] = {"ic", "ode"};
  for (int i = 0; i < 2; ++i) {
    const double gap = nadir(i) - utopia(i);
    if (gap < 1e-12) {
      lambda[i] = 1.0;
      if (warnings != nullptr) {
        std::ostringstream msg;
        msg << "degenerate " << names[i] << " gap " << gap << "; weight set to 1";
        warnings->push_back(msg.str());
      }
    } else {
      lambda[i] = 1.0 / gap;
    }
  }
  return {lambda[0], lambda[1], 0.0};
}

Vector adaptive_rebalance(const Eigen::Ref<const Vector>& grad_norms,
                          const Eigen::Ref<const Vector>& lambda, double alpha) {
  if (grad_norms.size() != lambda.size()) throw ShapeError("adaptive_rebalance: size mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("adaptive_rebalance: alpha outside [0, 1]");
  if (!grad_norms.allFinite() || (grad_norms.array() < 0.0).any()) {
    throw DomainError("adaptive_rebalance: gradient norms must be finite and nonnegative");
  }
  const double total = grad_norms.sum();
  Vector out = lambda;
  if (total == 0.0) return out;
  for (Index i = 0; i < out.size(); ++i) {
    if (grad_norms(i) == 0.0) continue;
    out(i) = alpha * lambda(i) + (1.0 - alpha) * (total / grad_norms(i));
  }
  return out;
}

nlohmann::json balance_report(const Eigen::Vector2d& utopia,
                              const Eigen::Vector2d& nadir,
                              const pinn::LossWeights& initial,
                              const std::vector<RebalanceRecord>& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& r : trace) {
    steps.push_back({{"epoch", r.epoch},
                     {"grad_norm_ic", r.grad_norms(0)},
                     {"grad_norm_ode", r.grad_norms(1)},
                     {"lambda_ic", r.lambda(0)},
                     {"lambda_ode", r.lambda(1)}});
  }
  return {{"utopia", {{"ic", utopia(0)}, {"ode", utopia(1)}}},
          {"nadir", {{"ic", nadir(0)}, {"ode", nadir(1)}}},
          {"initial_lambda", {{"ic", initial.ic}, {"ode", initial.ode}}},
          {"trace", steps}};
}

}  // namespace gridpinn::balance
