// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: simulate, train, eval, rollout, diagnose.
// Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
// 4 I/O failure, 1 anything else.

#include "gridpinn/export.hpp"
#include "gridpinn/harness.hpp"
#include "gridpinn/seqroll.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace gp = gridpinn;
namespace hs = gridpinn::harness;

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Physics-informed neural networks for power-system dynamics"};
  app.require_subcommand(1);

  std::string model_name, config_path, out_dir, checkpoint_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool desk_scale = false, verbose = false;
  long steps = 0;
  double dt = 0.0;
  int ic_index = 0;

  auto* simulate = app.add_subcommand("simulate", "Reference trajectories and figure data");
  simulate->add_option("--model", model_name, "sg or inverter")->required()
      ->check(CLI::IsMember({"sg", "inverter"}));
  simulate->add_option("--config", config_path, "experiment configuration (JSON)");
  simulate->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "Full training pipeline");
  train->add_option("--config", config_path, "experiment configuration (JSON)")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--seed", seed, "override the configured seed");
  train->add_option("--threads", threads, "worker threads (0 = all)");
  train->add_flag("--desk-scale", desk_scale, "use the reduced iteration counts");
  train->add_flag("-v,--verbose", verbose, "print progress every 100 epochs");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the configured test set");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--config", config_path, "experiment configuration (JSON)")->required();
  eval->add_option("--out", out_dir, "output directory")->required();

  auto* rollout = app.add_subcommand("rollout", "Chain one-step predictions");
  rollout->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  rollout->add_option("--steps", steps, "number of steps")->required()->check(CLI::PositiveNumber);
  rollout->add_option("--dt", dt, "step length in seconds")->required()->check(CLI::PositiveNumber);
  rollout->add_option("--out", out_dir, "output directory")->required();
  rollout->add_option("--ic", ic_index, "index of the held-out IC to start from");

  auto* diagnose = app.add_subcommand("diagnose", "Hessian conditioning and stiffness");
  diagnose->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  auto* model_file = app.add_subcommand("model-file", "Write the inverter model definition");
  model_file->add_option("--out", out_dir, "output file")->required();
  model_file->add_option("--config", config_path, "experiment configuration (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto config_or_default = [&]() {
    return config_path.empty() ? hs::ExperimentConfig{} : hs::load_config(config_path);
  };

  if (*simulate) {
    hs::ExperimentConfig c = config_or_default();
    c.model = hs::model_kind_from_string(model_name);
    hs::run_simulation(c, out_dir);
  } else if (*train) {
    hs::ExperimentConfig c = hs::load_config(config_path);
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    c.output_dir = out_dir;
    c.validate();
    const auto r = hs::run_training(c, {desk_scale, verbose});
    std::cout << r.metrics["test"]["per_state"].dump(2) << '\n'
              << "total seconds: " << r.timings["total"].get<double>() << '\n';
  } else if (*eval) {
    const auto ck = hs::load_checkpoint(checkpoint_path);
    const auto m = hs::run_evaluation(ck, hs::load_config(config_path), out_dir);
    std::cout << m["test"]["per_state"].dump(2) << '\n';
  } else if (*rollout) {
    const auto ck = hs::load_checkpoint(checkpoint_path);
    const auto model = hs::build_model(ck.config);
    const Eigen::VectorXd center = hs::operating_point(ck.config, *model);
    const auto test = hs::generate_dataset(ck.config, *model, center,
                                           std::max<gp::Index>(ck.config.n_test, ic_index + 1),
                                           gp::streams::kTestIcs);
    if (ic_index < 0) throw gp::ConfigError("--ic must be nonnegative");
    if (dt > ck.net.norm.t_end) throw gp::ConfigError("--dt exceeds the network's trained horizon");
    auto traj = gp::seq::rollout(ck.net, test.ics.col(ic_index), dt, steps);
    traj.model_name = std::string(model->name());
    gp::io::ensure_directory(out_dir);
    gp::ode::write_csv(traj, std::filesystem::path(out_dir) / "rollout.csv");
    std::cout << "wrote " << (std::filesystem::path(out_dir) / "rollout.csv").string() << '\n';
  } else if (*diagnose) {
    std::cout << hs::diagnose(hs::load_checkpoint(checkpoint_path)).dump(2) << '\n';
  } else if (*model_file) {
    hs::ExperimentConfig c = config_or_default();
    c.model = hs::ModelKind::inverter;
    const auto model = hs::build_model(c);
    gp::models::save_inverter_definition(
        dynamic_cast<const gp::models::InverterModel&>(*model).definition(), out_dir);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  gp::tune_allocator();
  try {
    return run(argc, argv);
  } catch (const gp::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const gp::NumericalError& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return 3;
  } catch (const gp::DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return 3;
  } catch (const gp::StiffnessError& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return 3;
  } catch (const gp::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
