// SPDX-License-Identifier: Apache-2.0
//
// Experiment pipeline: configuration, dataset generation, training,
// evaluation against the reference integrator, checkpoints and artifacts.

#pragma once

#include "gridpinn/core.hpp"
#include "gridpinn/lossbalance.hpp"
#include "gridpinn/odesolve.hpp"
#include "gridpinn/optimizers.hpp"
#include "gridpinn/pinnloss.hpp"
#include "gridpinn/psmodels.hpp"
#include "gridpinn/seqroll.hpp"
#include "gridpinn/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace gridpinn::harness {

enum class ModelKind { sg, inverter };

std::string to_string(ModelKind m);
ModelKind model_kind_from_string(const std::string& s);

struct Seq2SeqConfig {
  bool enabled = false;
  std::optional<double> delta_t;      // default t_end / 10 (sg), t_end / 20 (inverter)
  std::optional<Index> n_ode;         // default n_ode / number of steps
};

struct HessianConfig {
  Index n_ic = 10;      // leading training ICs used for the diagnostic
  Index n_points = 200; // collocation points per IC
  int max_iterations = 500;
  double tolerance = 1e-6;
  double fd_step = 1e-5;
};

/// Mirrors the JSON configuration file key for key.
struct ExperimentConfig {
  ModelKind model = ModelKind::sg;
  nlohmann::json model_params = nlohmann::json::object();  // parameter overrides
  std::string inverter_definition;  // JSON model file; empty = built from parameters
  std::optional<double> t_end;      // default 0.5 s (sg), 0.05 s (inverter)
  Index n_ic = 50;
  Index n_ode = 1000;
  Index n_test = 10;
  Index eval_points = 1000;
  double box_fraction = 0.1;
  double box_floor = 0.01;
  int hidden_layers = 4;
  Index hidden_width = 64;
  opt::LrSchedule lr;
  long adam_epochs = 20000;
  long lbfgs_iterations = 5000;
  long desk_adam_epochs = 5000;
  long desk_lbfgs_iterations = 500;
  balance::BalanceConfig balance;
  pinn::Reduction reduction = pinn::Reduction::mean_square;
  bool resample_collocation = false;
  opt::LbfgsOptions lbfgs;
  Seq2SeqConfig seq2seq;
  HessianConfig hessian;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = one per hardware thread
  std::string output_dir = "out";

  ExperimentConfig();

  double horizon() const;
  double step_length() const;
  void validate() const;
};

/// Strict parse: unknown keys and wrong types throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Model built from the configuration, with parameter overrides applied.
std::shared_ptr<const models::DynamicsModel> build_model(const ExperimentConfig& c);

/// Operating point the sampling box is centered on.
Vector operating_point(const ExperimentConfig& c, const models::DynamicsModel& model);

/// Reference solver settings per model.
ode::SolverConfig reference_solver(const ExperimentConfig& c);

struct Dataset {
  Matrix ics;  // state_dim x n
  std::vector<ode::Trajectory> truth;
  Vector center;
  Vector half_width;
  long rejected = 0;
};

/// Samples `count` ICs uniformly in center +- max(fraction |center|, floor)
/// from stream `stream` and integrates each over [0, t_end]. Candidates
/// that fail to integrate or reach ||x||_inf >= 10 ||x0||_inf are
/// resampled; 1000 consecutive rejections throw ConfigError.
Dataset generate_dataset(const ExperimentConfig& c, const models::DynamicsModel& model,
                         const Vector& center, Index count, std::uint64_t stream);

/// Input scale = box half-width; output scale = largest deviation from the
/// center seen in the training trajectories, at least the half-width.
pinn::Normalizer make_normalizer(const Dataset& train, double t_end);

struct IcErrors {
  Vector relative_l2;  // per state
  Vector max_abs;      // per state
};

struct EvalReport {
  std::vector<IcErrors> per_ic;
  Vector mean_relative_l2;
  Vector median_relative_l2;
  Vector p90_relative_l2;
  Vector max_relative_l2;
  Vector mean_max_abs;
};

/// Uniform grid of `n` points on [0, t_end], both ends included.
Vector uniform_grid(double t_end, Index n);

/// ||pred_i - truth_i||_2 / ||truth_i||_2 and max |pred_i - truth_i| per row.
IcErrors compare(const Matrix& pred, const Matrix& truth);

/// Aggregates per-IC errors; the result does not depend on IC order.
EvalReport aggregate(std::vector<IcErrors> per_ic);

/// Network against the reference trajectories on `grid`.
EvalReport evaluate(const pinn::StateNet& net, const models::DynamicsModel& model,
                    const Dataset& test, const Vector& grid);

nlohmann::json to_json(const EvalReport& r, const models::DynamicsModel& model);

/// Names used for state columns and report keys.
std::vector<std::string> state_names(const models::DynamicsModel& model);

// -- checkpoints -----------------------------------------------------------------

struct Checkpoint {
  ExperimentConfig config;
  pinn::StateNet net;
  std::string kind = "state";  // "state" or "step"
  pinn::LossWeights weights;   // frozen weights of the final phase
};

nlohmann::json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// -- pipeline --------------------------------------------------------------------

struct RunOptions {
  bool desk_scale = false;
  bool verbose = false;
};

struct RunResult {
  nlohmann::json metrics;  // deterministic for a given config
  nlohmann::json timings;  // wall-clock seconds per stage
  Checkpoint checkpoint;
};

/// Dataset, training cascade, evaluation and every artifact under
/// config.output_dir. On divergence the last finite parameters are saved as
/// checkpoint_last_good.json before the error propagates.
RunResult run_training(const ExperimentConfig& c, const RunOptions& options = {});

/// Hessian conditioning of the frozen-weight loss on a reduced collocation
/// set, plus the model's stiffness ratio at the operating point.
nlohmann::json diagnose(const Checkpoint& ck);

/// Evaluation of a stored network on the configured test set, with exports.
nlohmann::json run_evaluation(const Checkpoint& ck, const ExperimentConfig& c,
                              const std::filesystem::path& out_dir);

/// Reference trajectories for the configured ICs plus figure data.
void run_simulation(const ExperimentConfig& c, const std::filesystem::path& out_dir);

}  // namespace gridpinn::harness
