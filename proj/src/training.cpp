// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/training.hpp"

#include "gridpinn/rng.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace gridpinn::train {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

void TrainOptions::validate() const {
  if (hidden_layers < 1 || hidden_width < 1) throw ConfigError("training: network needs a hidden layer");
  if (n_ode < 1) throw ConfigError("training: n_ode must be positive");
  if (adam_epochs < 0 || lbfgs_iterations < 0) throw ConfigError("training: iteration counts must be nonnegative");
  lr.validate();
  balance.validate();
  if (lbfgs.memory < 1) throw ConfigError("training: L-BFGS memory must be positive");
}

TrainResult train_state_net(std::shared_ptr<const models::DynamicsModel> model,
                            const Matrix& ics, const pinn::Normalizer& norm,
                            const TrainOptions& options, const Progress& progress) {
  options.validate();
  norm.validate();
  CounterRng coll_rng(options.seed, streams::kCollocation);
  pinn::PinnObjective objective(
      model, ics, pinn::sample_collocation(options.n_ode, norm.t_end, coll_rng),
      options.objective);

  TrainResult out(pinn::StateNet{
      nn::Mlp(pinn::state_net_config(norm, options.hidden_layers, options.hidden_width,
                                     options.seed, options.net_stream)),
      norm});

  auto t0 = Clock::now();
  const balance::UtopiaResult utopia = balance::compute_utopia(
      objective, norm, options.balance, options.lr, options.seed, options.objective.threads);
  out.utopia_table = utopia.table;
  out.utopia = utopia.utopia();
  out.nadir = balance::nadir_point(utopia);
  out.aux_epochs_ic = utopia.ic_epochs;
  out.aux_epochs_ode = utopia.ode_epochs;
  out.initial_weights = balance::init_weights(out.utopia, out.nadir, &out.warnings);
  out.seconds_auxiliary = seconds_since(t0);

  pinn::LossWeights w = out.initial_weights;
  pinn::StateNet& sn = out.net;
  pinn::StateNet last_good = sn;
  auto diverged = [&](const std::string& phase, long epoch) {
    std::ostringstream msg;
    msg << phase << ": non-finite loss or gradient at epoch " << epoch;
    return TrainingDiverged(msg.str(), epoch, last_good, w);
  };

  t0 = Clock::now();
  opt::AdamState adam(sn.net.n_params());
  Vector params = sn.net.params();
  for (long epoch = 0; epoch < options.adam_epochs; ++epoch) {
    if (options.resample_collocation && epoch > 0) {
      objective.set_collocation(pinn::sample_collocation(options.n_ode, norm.t_end, coll_rng));
    }
    const pinn::TermGradients tg = objective.gradients(sn);
    if (!std::isfinite(tg.values.l_ic) || !std::isfinite(tg.values.l_ode) ||
        !tg.g_ic.allFinite() || !tg.g_ode.allFinite()) {
      throw diverged("adam", epoch);
    }
    last_good = sn;
    if (epoch > 0 && epoch % options.balance.rebalance_period == 0) {
      const Eigen::Vector2d norms(tg.g_ic.norm(), tg.g_ode.norm());
      const Vector lambda = balance::adaptive_rebalance(norms, Eigen::Vector2d(w.ic, w.ode),
                                                        options.balance.alpha);
      w.ic = lambda(0);
      w.ode = lambda(1);
      out.rebalance.push_back({epoch, norms, Eigen::Vector2d(w.ic, w.ode)});
    }
    EpochRecord rec{epoch, "adam", tg.values, w, opt::lr_at(options.lr, epoch)};
    rec.values.total = tg.weighted(w);
    out.log.push_back(rec);
    if (progress) progress(rec);
    opt::adam_step(adam, params, tg.combine(w), rec.lr, epoch);
    sn.net.set_params(params);
  }
  out.seconds_adam = seconds_since(t0);

  // Weights are frozen from here on.
  t0 = Clock::now();
  opt::LbfgsState lbfgs;
  pinn::LossBreakdown last_values;
  const opt::Objective f = [&](const Vector& x, Vector& grad) {
    pinn::StateNet probe{nn::Mlp(sn.net.config(), x), norm};
    const pinn::TermGradients tg = objective.gradients(probe);
    grad = tg.combine(w);
    last_values = tg.values;
    return tg.weighted(w);
  };
  std::optional<pinn::LossBreakdown> accepted;
  for (long it = 0; it < options.lbfgs_iterations; ++it) {
    const long epoch = options.adam_epochs + it;
    opt::LbfgsStepInfo info;
    try {
      info = opt::lbfgs_step(lbfgs, params, f, options.lbfgs);
    } catch (const NumericalError&) {
      throw diverged("lbfgs", epoch);
    }
    if (!std::isfinite(info.f_after)) throw diverged("lbfgs", epoch);
    if (info.moved) {
      sn.net.set_params(params);
      last_good = sn;
    }
    EpochRecord rec{epoch, "lbfgs", {}, w, info.step};
    if (info.moved || !accepted) {
      accepted = info.moved ? last_values : objective.values(sn);
    }
    rec.values = *accepted;
    rec.values.total = info.f_after;
    out.log.push_back(rec);
    if (progress) progress(rec);
    if (!info.moved && info.grad_norm == 0.0) break;
  }
  out.lbfgs_fallbacks = lbfgs.fallbacks;
  out.lbfgs_skipped_pairs = lbfgs.skipped_pairs;
  out.seconds_lbfgs = seconds_since(t0);
  out.final_weights = w;
  return out;
}

void write_loss_log(const std::vector<EpochRecord>& log,
                    const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "epoch,l_ic,l_ode,l_sol,lambda_ic,lambda_ode,total,lr\n";
  os << std::setprecision(17);
  for (const auto& r : log) {
    os << r.epoch << ',' << r.values.l_ic << ',' << r.values.l_ode << ',' << r.values.l_sol
       << ',' << r.weights.ic << ',' << r.weights.ode << ',' << r.values.total << ',' << r.lr
       << '\n';
  }
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace gridpinn::train
