// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/export.hpp"
#include "gridpinn/harness.hpp"
#include "gridpinn/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace gridpinn;
using namespace gridpinn::harness;
using nlohmann::json;

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

/// A pipeline small enough for a unit test.
ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig c;
  c.n_ic = 4;
  c.n_ode = 24;
  c.n_test = 2;
  c.eval_points = 40;
  c.hidden_layers = 1;
  c.hidden_width = 8;
  c.desk_adam_epochs = 30;
  c.desk_lbfgs_iterations = 5;
  c.balance.aux_epochs = 15;
  c.balance.aux_width = 4;
  c.hessian.n_ic = 2;
  c.hessian.n_points = 10;
  c.hessian.max_iterations = 30;
  c.seed = 11;
  c.threads = 1;
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("configuration defaults") {
  const ExperimentConfig c;
  CHECK(c.n_ic == 50);
  CHECK(c.n_ode == 1000);
  CHECK(c.hidden_layers == 4);
  CHECK(c.hidden_width == 64);
  CHECK(c.lr.initial == 0.01);
  CHECK(c.lr.decay == 0.9);
  CHECK(c.lr.period == 100);
  CHECK(c.adam_epochs == 20000);
  CHECK(c.lbfgs_iterations == 5000);
  CHECK(c.desk_adam_epochs == 5000);
  CHECK(c.desk_lbfgs_iterations == 500);
  CHECK(c.lbfgs.memory == 20);
  CHECK(c.lbfgs.wolfe.c1 == 1e-4);
  CHECK(c.lbfgs.wolfe.c2 == 0.9);
  CHECK(c.balance.alpha == 0.9);
  CHECK(c.balance.rebalance_period == 100);
  CHECK(c.horizon() == 0.5);
  CHECK_FALSE(c.resample_collocation);
  ExperimentConfig inv;
  inv.model = ModelKind::inverter;
  CHECK(inv.horizon() == 0.05);
  CHECK(inv.step_length() == doctest::Approx(0.0025));
  CHECK(c.step_length() == doctest::Approx(0.05));
}

TEST_CASE("strict configuration parsing") {
  const ExperimentConfig c = config_from_json(json::parse(R"({"model": "sg", "n_ic": 12,
      "lr": {"initial": 0.005}, "balance": {"alpha": 0.5}, "resample_collocation": true})"));
  CHECK(c.n_ic == 12);
  CHECK(c.lr.initial == 0.005);
  CHECK(c.lr.decay == 0.9);
  CHECK(c.balance.alpha == 0.5);
  CHECK(c.resample_collocation);

  const json round = to_json(config_from_json(to_json(c)));
  CHECK(round == to_json(c));

  CHECK_THROWS_AS(config_from_json(json::parse(R"({"n_ics": 3})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"n_ic": "three"})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"lr": {"rate": 0.1}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": "wind"})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"n_ode": 0})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"model_params": {"bogus": 1.0}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": "inverter", "model_params": {"H": 1.0}})")),
                  ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse("[1, 2]")), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("dataset generation") {
  ExperimentConfig c;
  c.threads = 1;
  const auto model = build_model(c);
  const Vector center = operating_point(c, *model);
  CHECK((model->rhs(center, 0.0)).cwiseAbs().maxCoeff() < 1e-9);

  const Dataset a = generate_dataset(c, *model, center, 4, streams::kTrainIcs);
  const Dataset b = generate_dataset(c, *model, center, 4, streams::kTrainIcs);
  const Dataset test = generate_dataset(c, *model, center, 3, streams::kTestIcs);
  CHECK(a.ics == b.ics);
  CHECK(a.truth[2].states == b.truth[2].states);
  CHECK(a.ics.cols() == 4);
  CHECK(a.truth.size() == 4);
  for (Index i = 0; i < test.ics.cols(); ++i) {
    for (Index j = 0; j < a.ics.cols(); ++j) CHECK(test.ics.col(i) != a.ics.col(j));
  }

  for (size_t k = 0; k < a.truth.size(); ++k) {
    const ode::Trajectory& tr = a.truth[k];
    const Vector x0 = a.ics.col(static_cast<Index>(k));
    CHECK(((x0 - center).cwiseAbs().array() <= a.half_width.array()).all());
    CHECK(tr.times(0) == 0.0);
    CHECK(tr.times(tr.size() - 1) == 0.5);
    CHECK(tr.states.cwiseAbs().maxCoeff() < 10.0 * x0.cwiseAbs().maxCoeff());
    const double settle = (tr.back() - center).norm() / (x0 - center).norm();
    CHECK(settle < 0.05);
  }
  CHECK(a.half_width(3) == doctest::Approx(0.1 * std::abs(center(3))));

  const pinn::Normalizer n = make_normalizer(a, 0.5);
  CHECK(n.center == center);
  CHECK(n.input_scale == a.half_width);
  CHECK((n.output_scale.array() >= a.half_width.array()).all());
  CHECK(n.t_end == 0.5);
}

TEST_CASE("evaluation metrics") {
  const Vector grid = uniform_grid(2.0, 5);
  CHECK(grid(0) == 0.0);
  CHECK(grid(4) == 2.0);
  CHECK(grid(1) == 0.5);
  CHECK_THROWS_AS(uniform_grid(1.0, 1), ContractError);

  const Matrix truth = (Matrix(2, 4) << 1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.5, 2.0).finished();
  const IcErrors same = compare(truth, truth);
  CHECK(same.relative_l2.isZero(0.0));
  CHECK(same.max_abs.isZero(0.0));

  Matrix shifted = truth;
  shifted.row(0).array() += 0.1;
  const IcErrors off = compare(shifted, truth);
  CHECK(off.relative_l2(0) == doctest::Approx(0.1 * 2.0 / std::sqrt(30.0)).epsilon(1e-14));
  CHECK(off.relative_l2(1) == 0.0);
  CHECK(off.max_abs(0) == doctest::Approx(0.1).epsilon(1e-14));

  std::vector<IcErrors> errs;
  CounterRng rng(2, 2);
  for (int k = 0; k < 7; ++k) {
    IcErrors e;
    e.relative_l2 = Eigen::Vector2d(rng.uniform(), rng.uniform());
    e.max_abs = Eigen::Vector2d(rng.uniform(), rng.uniform());
    errs.push_back(e);
  }
  const EvalReport r1 = aggregate(errs);
  std::reverse(errs.begin(), errs.end());
  std::swap(errs[1], errs[4]);
  const EvalReport r2 = aggregate(errs);
  CHECK(r1.mean_relative_l2 == r2.mean_relative_l2);
  CHECK(r1.median_relative_l2 == r2.median_relative_l2);
  CHECK(r1.p90_relative_l2 == r2.p90_relative_l2);
  CHECK((r1.max_relative_l2.array() >= r1.p90_relative_l2.array()).all());
  CHECK((r1.p90_relative_l2.array() >= r1.median_relative_l2.array()).all());
  CHECK_THROWS_AS(aggregate({}), ContractError);
}

TEST_CASE("side-by-side export") {
  const auto dir = std::filesystem::temp_directory_path() / "gridpinn_harness_csv";
  io::ensure_directory(dir);
  const Vector t = Eigen::Vector3d(0.0, 0.1, 1.0 / 3.0);
  const Matrix truth = (Matrix(2, 3) << 1.0 / 7.0, 2.0, -3.5e-12, 0.1, 0.2, 0.3).finished();
  const Matrix pred = truth * (1.0 + 1e-9);
  io::write_side_by_side(t, truth, pred, {"a", "b"}, dir / "s.csv");
  const auto rows = read_csv(dir / "s.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"t", "a_true", "b_true", "a_pred", "b_pred"});
  for (size_t r = 1; r < rows.size(); ++r) {
    REQUIRE(rows[r].size() == 5);
    const Index k = static_cast<Index>(r - 1);
    CHECK(std::strtod(rows[r][0].c_str(), nullptr) == t(k));
    CHECK(std::strtod(rows[r][1].c_str(), nullptr) == truth(0, k));
    CHECK(std::strtod(rows[r][4].c_str(), nullptr) == pred(1, k));
  }
  CHECK_THROWS_AS(io::write_side_by_side(t, truth, pred, {"a"}, dir / "bad.csv"), ShapeError);
}

TEST_CASE("checkpoint round trip and initial-time prediction") {
  ExperimentConfig c;
  c.hidden_layers = 2;
  c.hidden_width = 6;
  const pinn::Normalizer norm{Vector::Constant(4, 0.5), Vector::Constant(4, 0.1),
                              Vector::Constant(4, 2.0), 0.5};
  const pinn::StateNet sn{nn::Mlp(pinn::state_net_config(norm, 2, 6, 3, streams::kMainNet)), norm};
  const Checkpoint ck{c, sn, "state", {0.25, 3.5, 0.0}};
  const auto path = std::filesystem::temp_directory_path() / "gridpinn_ck.json";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.net.net.params() == sn.net.params());
  CHECK(back.net.norm.output_scale == norm.output_scale);
  CHECK(back.weights.ode == 3.5);
  CHECK(back.kind == "state");
  CHECK(to_json(back.config) == to_json(c));

  const Vector x0 = Eigen::Vector4d(0.45, 0.6, 0.5, 0.52);
  Vector in(5);
  in << norm.features(x0), 0.0;
  CHECK(sn.predict(x0, Vector::Zero(1)) == norm.decode(sn.net.forward(in)));

  json broken = to_json(ck);
  broken["format"] = "other";
  CHECK_THROWS_AS(checkpoint_from_json(broken), ConfigError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ck.json"), IoError);
}

TEST_CASE("small end-to-end run is reproducible") {
  const std::string out_a = GRIDPINN_TEST_OUT "/run_a";
  const std::string out_b = GRIDPINN_TEST_OUT "/run_b";
  const RunResult a = run_training(tiny_config(out_a), {true, false});
  const RunResult b = run_training(tiny_config(out_b), {true, false});
  json ma = a.metrics, mb = b.metrics;
  ma["config"].erase("output_dir");
  mb["config"].erase("output_dir");
  CHECK(ma.dump() == mb.dump());
  CHECK(a.checkpoint.net.net.params() == b.checkpoint.net.net.params());

  const std::filesystem::path dir = out_a;
  for (const char* f : {"metrics.json", "timings.json", "checkpoint.json", "loss_log.csv",
                        "balance_report.json", "trajectories/test_00.csv", "trajectories/test_01.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  }
  const auto log = read_csv(dir / "loss_log.csv");
  CHECK(log[0] == std::vector<std::string>{"epoch", "l_ic", "l_ode", "l_sol", "lambda_ic",
                                           "lambda_ode", "total", "lr"});
  CHECK(log.size() >= 1 + 30 + 1);
  CHECK(log.size() <= 1 + 30 + 5);
  const auto traj = read_csv(dir / "trajectories/test_00.csv");
  CHECK(traj.size() == 41);
  CHECK(traj[0].size() == 1 + 2 * 4);

  const json m = io::read_json(dir / "metrics.json");
  CHECK(m["state_names"] == json({"i_d", "i_q", "omega", "delta"}));
  CHECK(m["test"]["per_state"].size() == 4);
  CHECK(m["training"]["lbfgs"]["iterations"].get<long>() <= 5);
  CHECK(m["stiffness_ratio"].get<double>() > 1.0);

  // Loss is nonincreasing across the L-BFGS phase.
  double prev = INFINITY;
  for (size_t r = 31; r < log.size(); ++r) {
    const double total = std::strtod(log[r][6].c_str(), nullptr);
    CHECK(total <= prev);
    prev = total;
  }

  // Stored network reproduces the recorded test metrics.
  const Checkpoint ck = load_checkpoint(dir / "checkpoint.json");
  const json ev = run_evaluation(ck, ck.config, dir / "eval");
  CHECK(ev["test"]["mean_relative_l2_over_states"] == m["test"]["mean_relative_l2_over_states"]);
  const json diag = diagnose(ck);
  CHECK(diag["hessian"]["ratio"].get<double>() > 0.0);
}

TEST_CASE("seq2seq pipeline") {
  ExperimentConfig c = tiny_config(GRIDPINN_TEST_OUT "/run_seq");
  c.seq2seq.enabled = true;
  c.seq2seq.n_ode = 6;
  const RunResult r = run_training(c, {true, false});
  const json& s = r.metrics["seq2seq"];
  CHECK(s["n_steps"] == 10);
  CHECK(s["delta_t"].get<double>() == doctest::Approx(0.05));
  CHECK(s["mean_scaled_error_per_step"].size() == 11);
  CHECK(s["mean_scaled_error_per_step"][0].get<double>() == 0.0);
  CHECK(std::filesystem::exists(std::filesystem::path(c.output_dir) / "checkpoint_step.json"));
  const Checkpoint step = load_checkpoint(std::filesystem::path(c.output_dir) / "checkpoint_step.json");
  CHECK(step.kind == "step");
  CHECK(step.net.norm.t_end == doctest::Approx(0.05));
}
