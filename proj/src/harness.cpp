// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/harness.hpp"

#include "gridpinn/export.hpp"
#include "gridpinn/parallel.hpp"
#include "gridpinn/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace gridpinn::harness {

using nlohmann::json;

std::string to_string(ModelKind m) { return m == ModelKind::sg ? "sg" : "inverter"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "sg") return ModelKind::sg;
  if (s == "inverter") return ModelKind::inverter;
  throw ConfigError("unknown model '" + s + "' (expected sg or inverter)");
}

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig::ExperimentConfig() { balance.aux_width = hidden_width / 2; }

double ExperimentConfig::horizon() const {
  if (t_end) return *t_end;
  return model == ModelKind::sg ? 0.5 : 0.05;
}

double ExperimentConfig::step_length() const {
  if (seq2seq.delta_t) return *seq2seq.delta_t;
  return horizon() / (model == ModelKind::sg ? 10.0 : 20.0);
}

void ExperimentConfig::validate() const {
  if (!(horizon() > 0.0)) throw ConfigError("t_end must be positive");
  if (n_ic < 1 || n_ode < 1 || n_test < 1 || eval_points < 2) {
    throw ConfigError("n_ic, n_ode and n_test must be positive and eval_points >= 2");
  }
  if (!(box_fraction >= 0.0) || !(box_floor > 0.0)) throw ConfigError("box_fraction must be >= 0 and box_floor > 0");
  if (hidden_layers < 1 || hidden_width < 1) throw ConfigError("network needs at least one hidden layer");
  if (adam_epochs < 1 || lbfgs_iterations < 1 || desk_adam_epochs < 1 || desk_lbfgs_iterations < 1) {
    throw ConfigError("iteration counts must be positive");
  }
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (hessian.n_ic < 1 || hessian.n_points < 1 || hessian.max_iterations < 1 ||
      !(hessian.tolerance > 0.0) || !(hessian.fd_step > 0.0)) {
    throw ConfigError("invalid hessian settings");
  }
  if (lbfgs.memory < 1) throw ConfigError("lbfgs memory must be positive");
  if (!(lbfgs.wolfe.c1 > 0.0 && lbfgs.wolfe.c1 < lbfgs.wolfe.c2 && lbfgs.wolfe.c2 < 1.0)) {
    throw ConfigError("lbfgs Wolfe constants need 0 < c1 < c2 < 1");
  }
  lr.validate();
  balance.validate();
  if (seq2seq.enabled) {
    seq::StepNetConfig{step_length(), hidden_layers, hidden_width, 1}.validate(horizon());
    if (seq2seq.n_ode && *seq2seq.n_ode < 1) throw ConfigError("seq2seq.n_ode must be positive");
  }
}

namespace {

/// Reads keys from one JSON object and rejects any it was not asked about.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  template <typename T>
  void read_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    read(key, v);
    out = v;
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(where_ + ": unknown key '" + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

models::SgParams sg_params(const json& overrides) {
  models::SgParams p;
  StrictObject o(overrides, "model_params");
  o.read("omega_g", p.omega_g);
  o.read("R_s", p.R_s);
  o.read("L_s", p.L_s);
  o.read("D_p", p.D_p);
  o.read("J", p.J);
  o.read_optional("T_m", p.T_m);
  o.read("V", p.V);
  o.read("m_if", p.m_if);
  o.finish();
  p.validate();
  return p;
}

models::InverterParams inverter_params(const json& overrides) {
  models::InverterParams p;
  StrictObject o(overrides, "model_params");
  o.read("v_phase", p.v_phase);
  o.read("f_grid", p.f_grid);
  o.read("r_coupl", p.r_coupl);
  o.read("x_coupl", p.x_coupl);
  o.read("v_dc", p.v_dc);
  o.read("l_filter", p.l_filter);
  o.read("c_filter", p.c_filter);
  o.read("r_filter", p.r_filter);
  o.read("r_ground", p.r_ground);
  o.read("f_c", p.f_c);
  o.read("p_ref", p.p_ref);
  o.read("q_ref", p.q_ref);
  o.read("kp_d", p.kp_d);
  o.read("ki_d", p.ki_d);
  o.read("kp_q", p.kp_q);
  o.read("ki_q", p.ki_q);
  o.read("kp_pll", p.kp_pll);
  o.read("ki_pll", p.ki_pll);
  o.read_optional("v_sat_limit", p.v_sat_limit);
  o.finish();
  p.validate();
  return p;
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  StrictObject o(j, "config");
  std::string model = "sg";
  o.read("model", model);
  c.model = model_kind_from_string(model);
  o.read("model_params", c.model_params);
  if (!c.model_params.is_object()) throw ConfigError("config.model_params: expected an object");
  o.read("inverter_definition", c.inverter_definition);
  o.read_optional("t_end", c.t_end);
  o.read("n_ic", c.n_ic);
  o.read("n_ode", c.n_ode);
  o.read("n_test", c.n_test);
  o.read("eval_points", c.eval_points);
  o.read("box_fraction", c.box_fraction);
  o.read("box_floor", c.box_floor);
  o.read("hidden_layers", c.hidden_layers);
  o.read("hidden_width", c.hidden_width);
  o.read("adam_epochs", c.adam_epochs);
  o.read("lbfgs_iterations", c.lbfgs_iterations);
  o.read("desk_adam_epochs", c.desk_adam_epochs);
  o.read("desk_lbfgs_iterations", c.desk_lbfgs_iterations);
  o.read("seed", c.seed);
  o.read("threads", c.threads);
  o.read("output_dir", c.output_dir);
  std::string reduction = pinn::to_string(c.reduction);
  o.read("reduction", reduction);
  o.read("resample_collocation", c.resample_collocation);
  c.reduction = pinn::reduction_from_string(reduction);

  c.balance.aux_width = std::max<Index>(1, c.hidden_width / 2);
  if (o.has("lr")) {
    StrictObject s(o.child("lr"), "config.lr");
    s.read("initial", c.lr.initial);
    s.read("decay", c.lr.decay);
    s.read("period", c.lr.period);
    s.finish();
  }
  if (o.has("lbfgs")) {
    StrictObject s(o.child("lbfgs"), "config.lbfgs");
    s.read("memory", c.lbfgs.memory);
    s.read("init_step", c.lbfgs.init_step);
    s.read("c1", c.lbfgs.wolfe.c1);
    s.read("c2", c.lbfgs.wolfe.c2);
    s.read("max_evaluations", c.lbfgs.wolfe.max_evaluations);
    s.finish();
  }
  if (o.has("balance")) {
    StrictObject s(o.child("balance"), "config.balance");
    s.read("aux_epochs", c.balance.aux_epochs);
    s.read("aux_layers", c.balance.aux_layers);
    s.read("aux_width", c.balance.aux_width);
    s.read("rebalance_period", c.balance.rebalance_period);
    s.read("alpha", c.balance.alpha);
    s.read("plateau_window", c.balance.plateau.window);
    s.read("plateau_tolerance", c.balance.plateau.tolerance);
    s.finish();
  }
  if (o.has("seq2seq")) {
    StrictObject s(o.child("seq2seq"), "config.seq2seq");
    s.read("enabled", c.seq2seq.enabled);
    s.read_optional("delta_t", c.seq2seq.delta_t);
    s.read_optional("n_ode", c.seq2seq.n_ode);
    s.finish();
  }
  if (o.has("hessian")) {
    StrictObject s(o.child("hessian"), "config.hessian");
    s.read("n_ic", c.hessian.n_ic);
    s.read("n_points", c.hessian.n_points);
    s.read("max_iterations", c.hessian.max_iterations);
    s.read("tolerance", c.hessian.tolerance);
    s.read("fd_step", c.hessian.fd_step);
    s.finish();
  }
  o.finish();
  c.validate();
  // Parameter overrides are checked against the selected model now so a
  // typo fails before any work starts.
  if (c.model == ModelKind::sg) {
    sg_params(c.model_params);
  } else {
    inverter_params(c.model_params);
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  return {{"model", to_string(c.model)},
          {"model_params", c.model_params},
          {"inverter_definition", c.inverter_definition},
          {"t_end", optional_json(c.t_end)},
          {"n_ic", c.n_ic},
          {"n_ode", c.n_ode},
          {"n_test", c.n_test},
          {"eval_points", c.eval_points},
          {"box_fraction", c.box_fraction},
          {"box_floor", c.box_floor},
          {"hidden_layers", c.hidden_layers},
          {"hidden_width", c.hidden_width},
          {"lr", {{"initial", c.lr.initial}, {"decay", c.lr.decay}, {"period", c.lr.period}}},
          {"lbfgs",
           {{"memory", c.lbfgs.memory},
            {"init_step", c.lbfgs.init_step},
            {"c1", c.lbfgs.wolfe.c1},
            {"c2", c.lbfgs.wolfe.c2},
            {"max_evaluations", c.lbfgs.wolfe.max_evaluations}}},
          {"adam_epochs", c.adam_epochs},
          {"lbfgs_iterations", c.lbfgs_iterations},
          {"desk_adam_epochs", c.desk_adam_epochs},
          {"desk_lbfgs_iterations", c.desk_lbfgs_iterations},
          {"balance",
           {{"aux_epochs", c.balance.aux_epochs},
            {"aux_layers", c.balance.aux_layers},
            {"aux_width", c.balance.aux_width},
            {"rebalance_period", c.balance.rebalance_period},
            {"alpha", c.balance.alpha},
            {"plateau_window", c.balance.plateau.window},
            {"plateau_tolerance", c.balance.plateau.tolerance}}},
          {"reduction", pinn::to_string(c.reduction)},
          {"resample_collocation", c.resample_collocation},
          {"seq2seq",
           {{"enabled", c.seq2seq.enabled},
            {"delta_t", optional_json(c.seq2seq.delta_t)},
            {"n_ode", optional_json(c.seq2seq.n_ode)}}},
          {"hessian",
           {{"n_ic", c.hessian.n_ic},
            {"n_points", c.hessian.n_points},
            {"max_iterations", c.hessian.max_iterations},
            {"tolerance", c.hessian.tolerance},
            {"fd_step", c.hessian.fd_step}}},
          {"seed", c.seed},
          {"threads", c.threads},
          {"output_dir", c.output_dir}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return config_from_json(io::read_json(path));
}

// ---------------------------------------------------------------------------
// Model and data

std::shared_ptr<const models::DynamicsModel> build_model(const ExperimentConfig& c) {
  if (c.model == ModelKind::sg) return std::make_shared<models::SgModel>(sg_params(c.model_params));
  const models::InverterParams p = inverter_params(c.model_params);
  if (c.inverter_definition.empty()) return std::make_shared<models::InverterModel>(p);
  return std::make_shared<models::InverterModel>(p, models::load_inverter_definition(c.inverter_definition));
}

Vector operating_point(const ExperimentConfig& c, const models::DynamicsModel& model) {
  if (c.model == ModelKind::sg) {
    const auto& sg = dynamic_cast<const models::SgModel&>(model);
    return models::sg_equilibrium(sg.params(), models::sg_default_guess(sg.params())).to_vector();
  }
  return dynamic_cast<const models::InverterModel&>(model).nominal_steady_state();
}

ode::SolverConfig reference_solver(const ExperimentConfig& c) {
  ode::SolverConfig s;
  if (c.model == ModelKind::sg) {
    s.method = ode::Method::rk45;
    s.rel_tol = 1e-10;
    s.abs_tol = 1e-10;
  } else {
    s.method = ode::Method::implicit_trapezoidal;
    s.fixed_step = 1e-6;
  }
  return s;
}

Dataset generate_dataset(const ExperimentConfig& c, const models::DynamicsModel& model,
                         const Vector& center, Index count, std::uint64_t stream) {
  if (center.size() != model.state_dim()) throw ShapeError("generate_dataset: center size mismatch");
  Dataset d;
  d.center = center;
  d.half_width = (c.box_fraction * center.cwiseAbs()).cwiseMax(c.box_floor);
  d.ics.resize(model.state_dim(), count);
  const ode::SolverConfig solver = reference_solver(c);
  const double t_end = c.horizon();
  CounterRng rng(c.seed, stream);

  Index accepted = 0;
  long consecutive = 0;
  while (accepted < count) {
    // Candidates are drawn in order and integrated as a batch whose size
    // depends only on how many are still missing.
    const Index batch = count - accepted;
    Matrix cand(model.state_dim(), batch);
    for (Index k = 0; k < batch; ++k) {
      for (Index i = 0; i < model.state_dim(); ++i) {
        cand(i, k) = center(i) + rng.uniform(-d.half_width(i), d.half_width(i));
      }
    }
    std::vector<std::optional<ode::Trajectory>> runs(static_cast<size_t>(batch));
    parallel_for(batch, c.threads, [&](long k) {
      try {
        ode::Trajectory tr = ode::integrate(model, cand.col(k), {0.0, t_end}, solver);
        const double bound = 10.0 * cand.col(k).cwiseAbs().maxCoeff();
        if (tr.states.allFinite() && tr.states.cwiseAbs().maxCoeff() < bound) {
          runs[static_cast<size_t>(k)] = std::move(tr);
        }
      } catch (const Error&) {
      }
    });
    for (Index k = 0; k < batch; ++k) {
      auto& run = runs[static_cast<size_t>(k)];
      if (!run) {
        ++d.rejected;
        if (++consecutive >= 1000) {
          throw ConfigError("dataset: 1000 consecutive initial conditions diverged; the sampling box is too wide");
        }
        continue;
      }
      consecutive = 0;
      d.ics.col(accepted++) = cand.col(k);
      run->model_name = std::string(model.name());
      d.truth.push_back(std::move(*run));
    }
  }
  return d;
}

pinn::Normalizer make_normalizer(const Dataset& train, double t_end) {
  pinn::Normalizer n;
  n.center = train.center;
  n.input_scale = train.half_width;
  n.output_scale = train.half_width;
  for (const auto& tr : train.truth) {
    n.output_scale = n.output_scale.cwiseMax(
        (tr.states.colwise() - train.center).cwiseAbs().rowwise().maxCoeff());
  }
  n.t_end = t_end;
  n.validate();
  return n;
}

// ---------------------------------------------------------------------------
// Evaluation

Vector uniform_grid(double t_end, Index n) {
  if (n < 2 || !(t_end > 0.0)) throw ContractError("uniform_grid: need n >= 2 and t_end > 0");
  Vector g(n);
  for (Index k = 0; k < n; ++k) g(k) = t_end * static_cast<double>(k) / static_cast<double>(n - 1);
  g(n - 1) = t_end;
  return g;
}

IcErrors compare(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw ShapeError("compare: shape mismatch");
  IcErrors e;
  const Matrix diff = pred - truth;
  e.relative_l2.resize(truth.rows());
  e.max_abs.resize(truth.rows());
  for (Index i = 0; i < truth.rows(); ++i) {
    const double denom = truth.row(i).norm();
    const double num = diff.row(i).norm();
    e.relative_l2(i) = denom > 0.0 ? num / denom : (num > 0.0 ? INFINITY : 0.0);
    e.max_abs(i) = diff.row(i).cwiseAbs().maxCoeff();
  }
  return e;
}

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> std_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

EvalReport aggregate(std::vector<IcErrors> per_ic) {
  if (per_ic.empty()) throw ContractError("aggregate: no test ICs");
  const Index n = per_ic.front().relative_l2.size();
  EvalReport r;
  r.mean_relative_l2 = Vector::Zero(n);
  r.median_relative_l2.resize(n);
  r.p90_relative_l2.resize(n);
  r.max_relative_l2.resize(n);
  r.mean_max_abs = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    std::vector<double> rel, mab;
    for (const auto& e : per_ic) {
      rel.push_back(e.relative_l2(i));
      mab.push_back(e.max_abs(i));
    }
    // Sorted sums make the aggregate independent of IC order.
    std::sort(rel.begin(), rel.end());
    std::sort(mab.begin(), mab.end());
    double s = 0.0, m = 0.0;
    for (size_t k = 0; k < rel.size(); ++k) {
      s += rel[k];
      m += mab[k];
    }
    r.mean_relative_l2(i) = s / static_cast<double>(rel.size());
    r.mean_max_abs(i) = m / static_cast<double>(mab.size());
    r.median_relative_l2(i) = quantile(rel, 0.5);
    r.p90_relative_l2(i) = quantile(rel, 0.9);
    r.max_relative_l2(i) = rel.back();
  }
  r.per_ic = std::move(per_ic);
  return r;
}

EvalReport evaluate(const pinn::StateNet& net, const models::DynamicsModel& model,
                    const Dataset& test, const Vector& grid) {
  std::vector<IcErrors> per_ic(test.truth.size());
  parallel_for(static_cast<long>(test.truth.size()), 1, [&](long k) {
    const auto& tr = test.truth[static_cast<size_t>(k)];
    const Matrix truth = ode::sample_at(tr, model, grid);
    per_ic[static_cast<size_t>(k)] = compare(net.predict(tr.front(), grid), truth);
  });
  return aggregate(std::move(per_ic));
}

std::vector<std::string> state_names(const models::DynamicsModel& model) {
  if (model.name() == "sg") return {"i_d", "i_q", "omega", "delta"};
  if (model.name() == "inverter") {
    return {models::kInverterStateNames.begin(), models::kInverterStateNames.end()};
  }
  std::vector<std::string> names;
  for (Index i = 0; i < model.state_dim(); ++i) names.push_back("x" + std::to_string(i));
  return names;
}

json to_json(const EvalReport& r, const models::DynamicsModel& model) {
  const auto names = state_names(model);
  json per_state = json::object();
  for (size_t i = 0; i < names.size(); ++i) {
    const Index k = static_cast<Index>(i);
    per_state[names[i]] = {{"mean_relative_l2", r.mean_relative_l2(k)},
                           {"median_relative_l2", r.median_relative_l2(k)},
                           {"p90_relative_l2", r.p90_relative_l2(k)},
                           {"max_relative_l2", r.max_relative_l2(k)},
                           {"mean_max_abs_error", r.mean_max_abs(k)}};
  }
  json per_ic = json::array();
  for (const auto& e : r.per_ic) {
    per_ic.push_back({{"relative_l2", std_vector(e.relative_l2)}, {"max_abs_error", std_vector(e.max_abs)}});
  }
  return {{"per_state", per_state},
          {"mean_relative_l2_over_states", r.mean_relative_l2.mean()},
          {"per_ic", per_ic}};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr int kCheckpointVersion = 1;

}  // namespace

json to_json(const Checkpoint& c) {
  return {{"format", "gridpinn-checkpoint"},
          {"version", kCheckpointVersion},
          {"kind", c.kind},
          {"config", to_json(c.config)},
          {"seed", c.config.seed},
          {"weights", {{"ic", c.weights.ic}, {"ode", c.weights.ode}, {"sol", c.weights.sol}}},
          {"normalizer", pinn::to_json(c.net.norm)},
          {"network", nn::to_json(c.net.net)}};
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "gridpinn-checkpoint") {
      throw ConfigError("checkpoint: unrecognized format");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ConfigError("checkpoint: unsupported version");
    }
    Checkpoint c{config_from_json(j.at("config")),
                 pinn::StateNet{nn::mlp_from_json(j.at("network")),
                                pinn::normalizer_from_json(j.at("normalizer"))},
                 j.at("kind").get<std::string>(),
                 pinn::LossWeights{j.at("weights").at("ic").get<double>(),
                                   j.at("weights").at("ode").get<double>(),
                                   j.at("weights").at("sol").get<double>()}};
    if (c.kind != "state" && c.kind != "step") throw ConfigError("checkpoint: unknown kind");
    if (c.net.net.config().input_dim != c.net.norm.state_dim() + 1 ||
        c.net.net.config().output_dim != c.net.norm.state_dim()) {
      throw ConfigError("checkpoint: network and normalizer sizes disagree");
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  io::write_json(to_json(c), path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(io::read_json(path));
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

train::TrainOptions training_options(const ExperimentConfig& c, bool desk_scale) {
  train::TrainOptions t;
  t.hidden_layers = c.hidden_layers;
  t.hidden_width = c.hidden_width;
  t.n_ode = c.n_ode;
  t.adam_epochs = desk_scale ? c.desk_adam_epochs : c.adam_epochs;
  t.lbfgs_iterations = desk_scale ? c.desk_lbfgs_iterations : c.lbfgs_iterations;
  t.lr = c.lr;
  t.lbfgs = c.lbfgs;
  t.balance = c.balance;
  t.objective.reduction = c.reduction;
  t.objective.threads = c.threads;
  t.resample_collocation = c.resample_collocation;
  t.seed = c.seed;
  return t;
}

json training_json(const train::TrainResult& r) {
  json trace = json::array();
  for (const auto& rec : r.log) {
    if (rec.epoch % 100 != 0 && &rec != &r.log.back()) continue;
    trace.push_back({{"epoch", rec.epoch},
                     {"phase", rec.phase},
                     {"l_ic", rec.values.l_ic},
                     {"l_ode", rec.values.l_ode},
                     {"total", rec.values.total}});
  }
  const auto& last = r.log.empty() ? train::EpochRecord{} : r.log.back();
  const long lbfgs_rows = std::count_if(r.log.begin(), r.log.end(),
                                        [](const train::EpochRecord& e) { return e.phase == "lbfgs"; });
  return {{"final", {{"l_ic", last.values.l_ic}, {"l_ode", last.values.l_ode},
                     {"l_sol", last.values.l_sol}, {"total", last.values.total}}},
          {"trace", trace},
          {"auxiliary", {{"epochs_ic", r.aux_epochs_ic},
                         {"epochs_ode", r.aux_epochs_ode},
                         {"table", {{r.utopia_table(0, 0), r.utopia_table(0, 1)},
                                    {r.utopia_table(1, 0), r.utopia_table(1, 1)}}}}},
          {"balance", balance::balance_report(r.utopia, r.nadir, r.initial_weights, r.rebalance)},
          {"final_lambda", {{"ic", r.final_weights.ic}, {"ode", r.final_weights.ode}}},
          {"lbfgs", {{"iterations", lbfgs_rows},
                     {"fallbacks", r.lbfgs_fallbacks}, {"skipped_pairs", r.lbfgs_skipped_pairs}}},
          {"warnings", r.warnings}};
}

json timings_json(const train::TrainResult& r) {
  return {{"auxiliary", r.seconds_auxiliary}, {"adam", r.seconds_adam}, {"lbfgs", r.seconds_lbfgs}};
}

void export_figures(const ExperimentConfig& c, const models::DynamicsModel& model,
                    const Vector& t, const Matrix& truth, const Matrix* pred,
                    const std::filesystem::path& dir) {
  auto row = [](const Matrix& m, Index i) -> Vector { return m.row(i).transpose(); };
  const double ms = 1e3;
  const Vector t_ms = t * ms;
  auto pair_plot = [&](const std::string& stem, const std::string& title,
                       const std::vector<std::pair<std::string, Vector>>& truth_cols,
                       const std::vector<Vector>& pred_cols) {
    std::vector<std::string> header{"t"};
    std::vector<Vector> cols{t};
    std::vector<io::Series> series;
    for (size_t k = 0; k < truth_cols.size(); ++k) {
      header.push_back(truth_cols[k].first + "_true");
      cols.push_back(truth_cols[k].second);
      series.push_back({truth_cols[k].first + " true", truth_cols[k].second, false});
      if (!pred_cols.empty()) {
        header.push_back(truth_cols[k].first + "_pred");
        cols.push_back(pred_cols[k]);
        series.push_back({truth_cols[k].first + " PINN", pred_cols[k], true});
      }
    }
    io::write_table(header, cols, dir / (stem + ".csv"));
    io::write_svg_plot(t_ms, series, title, "t [ms]", dir / (stem + ".svg"));
  };

  if (c.model == ModelKind::sg) {
    std::vector<Vector> pc, pa;
    if (pred) {
      pc = {row(*pred, 0), row(*pred, 1)};
      pa = {row(*pred, 3), row(*pred, 2)};
    }
    pair_plot("fig1_currents", "Stator currents", {{"i_d", row(truth, 0)}, {"i_q", row(truth, 1)}}, pc);
    pair_plot("fig1_angle_speed", "Rotor angle and speed",
              {{"delta", row(truth, 3)}, {"omega", row(truth, 2)}}, pa);
    return;
  }
  const auto& inv = dynamic_cast<const models::InverterModel&>(model);
  auto abc_and_power = [&](const Matrix& x) {
    std::array<Vector, 3> abc{Vector(t.size()), Vector(t.size()), Vector(t.size())};
    Vector p(t.size()), q(t.size());
    for (Index k = 0; k < t.size(); ++k) {
      const double angle = inv.params().omega_g() * t(k) + x(models::kTheta, k);
      const auto i = models::dq_to_abc(x(models::kIOd, k), x(models::kIOq, k), x(models::kIOO, k), angle);
      for (int ph = 0; ph < 3; ++ph) abc[static_cast<size_t>(ph)](k) = i[static_cast<size_t>(ph)];
      const auto pq = models::inverter_output_power(x.col(k), inv.params());
      p(k) = pq.p;
      q(k) = pq.q;
    }
    return std::make_pair(abc, std::make_pair(p, q));
  };
  const auto [abc_t, pq_t] = abc_and_power(truth);
  std::vector<Vector> pred_abc, pred_pq;
  if (pred) {
    const auto [abc_p, pq_p] = abc_and_power(*pred);
    pred_abc = {abc_p[0], abc_p[1], abc_p[2]};
    pred_pq = {pq_p.first, pq_p.second};
  }
  pair_plot("fig2_currents_abc", "Output currents",
            {{"i_a", abc_t[0]}, {"i_b", abc_t[1]}, {"i_c", abc_t[2]}}, pred_abc);
  pair_plot("fig2_power", "Output power", {{"P", pq_t.first}, {"Q", pq_t.second}}, pred_pq);
}

void export_test_trajectories(const pinn::StateNet& net, const models::DynamicsModel& model,
                              const Dataset& test, const Vector& grid,
                              const ExperimentConfig& c, const std::filesystem::path& out) {
  const auto names = state_names(model);
  io::ensure_directory(out / "trajectories");
  for (size_t k = 0; k < test.truth.size(); ++k) {
    const auto& tr = test.truth[k];
    const Matrix truth = ode::sample_at(tr, model, grid);
    const Matrix pred = net.predict(tr.front(), grid);
    std::ostringstream name;
    name << "test_" << std::setw(2) << std::setfill('0') << k << ".csv";
    io::write_side_by_side(grid, truth, pred, names, out / "trajectories" / name.str());
    if (k == 0) export_figures(c, model, grid, truth, &pred, out);
  }
}

json hessian_json(const opt::ConditionEstimate& e) {
  return {{"lambda_max", e.lambda_max},
          {"lambda_min", e.lambda_min},
          {"ratio", e.ratio},
          {"iterations_max", e.iterations_max},
          {"iterations_min", e.iterations_min},
          {"approximate", e.approximate}};
}

opt::ConditionEstimate hessian_estimate(const ExperimentConfig& c,
                                        std::shared_ptr<const models::DynamicsModel> model,
                                        const Matrix& train_ics, const pinn::StateNet& sn,
                                        const pinn::LossWeights& w) {
  const Index n = std::min<Index>(c.hessian.n_ic, train_ics.cols());
  CounterRng coll_rng(c.seed, streams::kCollocation);
  pinn::ObjectiveOptions oo;
  oo.reduction = c.reduction;
  oo.threads = c.threads;
  const pinn::PinnObjective obj(model, train_ics.leftCols(n),
                                pinn::sample_collocation(c.hessian.n_points, sn.norm.t_end, coll_rng), oo);
  const opt::GradientFn grad = [&](const Vector& x) {
    return obj.gradients(pinn::StateNet{nn::Mlp(sn.net.config(), x), sn.norm}).combine(w);
  };
  opt::HessianOptions ho;
  ho.fd_step = c.hessian.fd_step;
  ho.max_iterations = c.hessian.max_iterations;
  ho.tolerance = c.hessian.tolerance;
  ho.seed = c.seed;
  return opt::hessian_condition_estimate(grad, sn.net.params(), ho);
}

}  // namespace

RunResult run_training(const ExperimentConfig& c, const RunOptions& options) {
  c.validate();
  const auto t_start = Clock::now();
  const std::filesystem::path out = c.output_dir;
  io::ensure_directory(out);
  const auto model = build_model(c);
  json timings = json::object();

  auto t0 = Clock::now();
  const Vector center = operating_point(c, *model);
  const Dataset train_set = generate_dataset(c, *model, center, c.n_ic, streams::kTrainIcs);
  const Dataset test_set = generate_dataset(c, *model, center, c.n_test, streams::kTestIcs);
  for (Index a = 0; a < test_set.ics.cols(); ++a) {
    for (Index b = 0; b < train_set.ics.cols(); ++b) {
      if (test_set.ics.col(a) == train_set.ics.col(b)) throw ConfigError("test IC coincides with a training IC");
    }
  }
  const pinn::Normalizer norm = make_normalizer(train_set, c.horizon());
  timings["dataset"] = seconds_since(t0);

  const train::TrainOptions topt = training_options(c, options.desk_scale);
  train::Progress progress;
  if (options.verbose) {
    progress = [](const train::EpochRecord& r) {
      if (r.epoch % 100 == 0) {
        std::cerr << r.phase << " epoch " << r.epoch << " l_ic " << r.values.l_ic << " l_ode "
                  << r.values.l_ode << " total " << r.values.total << '\n';
      }
    };
  }

  std::optional<train::TrainResult> trained;
  try {
    trained = train::train_state_net(model, train_set.ics, norm, topt, progress);
  } catch (const train::TrainingDiverged& e) {
    save_checkpoint(Checkpoint{c, e.last_good(), "state", e.weights()}, out / "checkpoint_last_good.json");
    throw;
  }
  const train::TrainResult& r = *trained;
  timings["training"] = timings_json(r);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';

  t0 = Clock::now();
  const Vector grid = uniform_grid(c.horizon(), c.eval_points);
  const EvalReport report = evaluate(r.net, *model, test_set, grid);
  timings["evaluation"] = seconds_since(t0);

  t0 = Clock::now();
  const opt::ConditionEstimate cond = hessian_estimate(c, model, train_set.ics, r.net, r.final_weights);
  timings["hessian"] = seconds_since(t0);

  json metrics = {
      {"format_version", 1},
      {"model", to_string(c.model)},
      {"state_names", state_names(*model)},
      {"desk_scale", options.desk_scale},
      {"config", to_json(c)},
      {"dataset", {{"n_train", train_set.ics.cols()},
                   {"n_test", test_set.ics.cols()},
                   {"rejected_train", train_set.rejected},
                   {"rejected_test", test_set.rejected},
                   {"center", std_vector(center)},
                   {"half_width", std_vector(train_set.half_width)}}},
      {"normalizer", pinn::to_json(norm)},
      {"test", to_json(report, *model)},
      {"training", training_json(r)},
      {"hessian", hessian_json(cond)},
      {"stiffness_ratio", ode::stiffness_ratio(*model, center)}};

  const Checkpoint ck{c, r.net, "state", r.final_weights};

  if (c.seq2seq.enabled) {
    t0 = Clock::now();
    const double dt = c.step_length();
    const long n_steps = std::lround(c.horizon() / dt);
    // Step-net ICs: training states at every window start.
    Matrix step_ics(model->state_dim(), train_set.ics.cols() * n_steps);
    Vector starts(n_steps);
    for (long k = 0; k < n_steps; ++k) starts(k) = static_cast<double>(k) * dt;
    for (size_t k = 0; k < train_set.truth.size(); ++k) {
      step_ics.middleCols(static_cast<Index>(k) * n_steps, n_steps) =
          ode::sample_at(train_set.truth[k], *model, starts);
    }
    seq::StepNetConfig sc{dt, c.hidden_layers, c.hidden_width,
                          c.seq2seq.n_ode.value_or(std::max<Index>(1, c.n_ode / n_steps))};
    train::TrainOptions sopt = topt;
    sopt.net_stream = streams::kStepNet;
    const train::TrainResult step = seq::train_step_net(model, step_ics, norm, sc, sopt, progress);
    std::vector<IcErrors> roll_err, single_err;
    json growth = json::array();
    Vector rollout_times(n_steps + 1);
    for (long k = 0; k <= n_steps; ++k) rollout_times(k) = static_cast<double>(k) * dt;
    Vector per_step = Vector::Zero(n_steps + 1);
    for (const auto& tr : test_set.truth) {
      const ode::Trajectory roll = seq::rollout(step.net, tr.front(), dt, n_steps);
      const Matrix truth = ode::sample_at(tr, *model, rollout_times);
      roll_err.push_back(compare(roll.states, truth));
      single_err.push_back(compare(r.net.predict(tr.front(), rollout_times), truth));
      for (long k = 0; k <= n_steps; ++k) {
        per_step(k) += (roll.states.col(k) - truth.col(k)).cwiseQuotient(norm.output_scale).norm();
      }
    }
    per_step /= static_cast<double>(test_set.truth.size());
    metrics["seq2seq"] = {{"delta_t", dt},
                          {"n_steps", n_steps},
                          {"rollout", to_json(aggregate(roll_err), *model)},
                          {"single_net_at_rollout_times", to_json(aggregate(single_err), *model)},
                          {"mean_scaled_error_per_step", std_vector(per_step)},
                          {"training", training_json(step)}};
    save_checkpoint(Checkpoint{c, step.net, "step", step.final_weights}, out / "checkpoint_step.json");
    train::write_loss_log(step.log, out / "loss_log_step.csv");
    timings["seq2seq"] = timings_json(step);
    timings["seq2seq"]["total"] = seconds_since(t0);
  }

  t0 = Clock::now();
  save_checkpoint(ck, out / "checkpoint.json");
  train::write_loss_log(r.log, out / "loss_log.csv");
  io::write_json(metrics["training"]["balance"], out / "balance_report.json");
  export_test_trajectories(r.net, *model, test_set, grid, c, out);
  io::write_json(metrics, out / "metrics.json");
  timings["export"] = seconds_since(t0);
  timings["total"] = seconds_since(t_start);
  io::write_json(timings, out / "timings.json");
  return {metrics, timings, ck};
}

json diagnose(const Checkpoint& ck) {
  const ExperimentConfig& c = ck.config;
  const auto model = build_model(c);
  const Vector center = operating_point(c, *model);
  ExperimentConfig reduced = c;
  reduced.t_end = ck.net.norm.t_end;
  const Dataset train_set = generate_dataset(reduced, *model, center,
                                             std::min(c.n_ic, c.hessian.n_ic), streams::kTrainIcs);
  const auto t0 = Clock::now();
  const opt::ConditionEstimate cond = hessian_estimate(c, model, train_set.ics, ck.net, ck.weights);
  json out = {{"hessian", hessian_json(cond)},
              {"stiffness_ratio", ode::stiffness_ratio(*model, center)},
              {"seconds", seconds_since(t0)}};
  return out;
}

json run_evaluation(const Checkpoint& ck, const ExperimentConfig& c,
                    const std::filesystem::path& out_dir) {
  io::ensure_directory(out_dir);
  const auto model = build_model(c);
  if (model->state_dim() != ck.net.norm.state_dim()) {
    throw ConfigError("eval: checkpoint and configuration describe different models");
  }
  const Vector center = operating_point(c, *model);
  const Dataset test_set = generate_dataset(c, *model, center, c.n_test, streams::kTestIcs);
  const Vector grid = uniform_grid(std::min(c.horizon(), ck.net.norm.t_end), c.eval_points);
  const EvalReport report = evaluate(ck.net, *model, test_set, grid);
  json metrics = {{"format_version", 1},
                  {"model", to_string(c.model)},
                  {"state_names", state_names(*model)},
                  {"test", to_json(report, *model)}};
  export_test_trajectories(ck.net, *model, test_set, grid, c, out_dir);
  io::write_json(metrics, out_dir / "eval_metrics.json");
  return metrics;
}

void run_simulation(const ExperimentConfig& c, const std::filesystem::path& out_dir) {
  c.validate();
  io::ensure_directory(out_dir / "trajectories");
  const auto model = build_model(c);
  const Vector center = operating_point(c, *model);
  const Dataset d = generate_dataset(c, *model, center, c.n_ic, streams::kTrainIcs);
  for (size_t k = 0; k < d.truth.size(); ++k) {
    std::ostringstream name;
    name << "ic_" << std::setw(3) << std::setfill('0') << k << ".csv";
    ode::write_csv(d.truth[k], out_dir / "trajectories" / name.str());
  }
  const Vector grid = uniform_grid(c.horizon(), c.eval_points);
  Vector start = d.truth.front().front();
  Matrix truth = ode::sample_at(d.truth.front(), *model, grid);
  json summary = {{"model", to_string(c.model)},
                  {"n_ic", d.ics.cols()},
                  {"rejected", d.rejected},
                  {"operating_point", std_vector(center)},
                  {"stiffness_ratio", ode::stiffness_ratio(*model, center)}};
  if (c.model == ModelKind::inverter) {
    // Power tracking from the converter's enable state.
    const auto& inv = dynamic_cast<const models::InverterModel&>(*model);
    const ode::Trajectory tr = ode::integrate(*model, inv.enable_state(), {0.0, c.horizon()},
                                              reference_solver(c));
    ode::write_csv(tr, out_dir / "nominal_startup.csv");
    truth = ode::sample_at(tr, *model, grid);
    const auto pq = models::inverter_output_power(tr.back(), inv.params());
    summary["final_power"] = {{"P", pq.p}, {"Q", pq.q}};
  }
  export_figures(c, *model, grid, truth, nullptr, out_dir);
  io::write_json(summary, out_dir / "simulation.json");
}

}  // namespace gridpinn::harness
