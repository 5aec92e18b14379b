// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/pinnloss.hpp"

#include "gridpinn/parallel.hpp"

#include <array>
#include <cmath>
#include <sstream>

namespace gridpinn::pinn {

namespace {

Vector json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

std::vector<double> std_vector(const Vector& v) {
  return {v.data(), v.data() + v.size()};
}

nn::NodeId reduce(nn::Tape& tape, nn::NodeId r, Reduction reduction,
                  double divisor) {
  if (reduction == Reduction::max_square) return tape.max_column_square(r);
  return tape.sum_squares(r, divisor);
}

}  // namespace

// ---------------------------------------------------------------------------

void Normalizer::validate() const {
  const Index n = center.size();
  if (n == 0) throw ContractError("normalizer: empty state");
  if (input_scale.size() != n || output_scale.size() != n) {
    throw ShapeError("normalizer: scale length mismatch");
  }
  if (!(input_scale.array() > 0.0).all() || !(output_scale.array() > 0.0).all()) {
    throw DomainError("normalizer: scales must be positive");
  }
  if (!center.allFinite() || !input_scale.allFinite() || !output_scale.allFinite()) {
    throw DomainError("normalizer: non-finite entry");
  }
  if (!(t_end > 0.0)) throw DomainError("normalizer: t_end must be positive");
}

Matrix Normalizer::features(const Eigen::Ref<const Matrix>& ics) const {
  if (ics.rows() != state_dim()) throw ShapeError("normalizer: IC rows mismatch");
  return ((ics.colwise() - center).array().colwise() / input_scale.array()).matrix();
}

Matrix Normalizer::encode(const Eigen::Ref<const Matrix>& states) const {
  if (states.rows() != state_dim()) throw ShapeError("normalizer: state rows mismatch");
  return ((states.colwise() - center).array().colwise() / output_scale.array()).matrix();
}

Matrix Normalizer::decode(const Eigen::Ref<const Matrix>& y) const {
  if (y.rows() != state_dim()) throw ShapeError("normalizer: output rows mismatch");
  Matrix x = (y.array().colwise() * output_scale.array()).matrix();
  x.colwise() += center;
  return x;
}

nlohmann::json to_json(const Normalizer& n) {
  return {{"center", std_vector(n.center)},
          {"input_scale", std_vector(n.input_scale)},
          {"output_scale", std_vector(n.output_scale)},
          {"t_end", n.t_end}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  try {
    n.center = json_vector(j.at("center"));
    n.input_scale = json_vector(j.at("input_scale"));
    n.output_scale = json_vector(j.at("output_scale"));
    n.t_end = j.at("t_end").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("normalizer: malformed record: ") + e.what());
  }
  n.validate();
  return n;
}

// ---------------------------------------------------------------------------

namespace {

Matrix net_input(const Normalizer& norm, const Eigen::Ref<const Vector>& x0,
                 const Eigen::Ref<const Vector>& times) {
  const Index n = norm.state_dim();
  Matrix in(n + 1, times.size());
  in.topRows(n).colwise() = norm.features(x0).col(0);
  in.row(n) = times.transpose() / norm.t_end;
  return in;
}

}  // namespace

Matrix StateNet::predict(const Eigen::Ref<const Vector>& x0,
                         const Eigen::Ref<const Vector>& times) const {
  return norm.decode(net.forward(net_input(norm, x0, times)));
}

std::pair<Matrix, Matrix> StateNet::predict_with_rate(
    const Eigen::Ref<const Vector>& x0, const Eigen::Ref<const Vector>& times) const {
  const auto tg = nn::forward_with_time_grad(net, net_input(norm, x0, times),
                                             norm.state_dim());
  Matrix rate = (tg.rate.array().colwise() * (norm.output_scale.array() / norm.t_end)).matrix();
  return {norm.decode(tg.value), std::move(rate)};
}

nn::MlpConfig state_net_config(const Normalizer& norm, int hidden_layers,
                               Index hidden_width, std::uint64_t seed,
                               std::uint64_t stream) {
  nn::MlpConfig c;
  c.input_dim = norm.state_dim() + 1;
  c.output_dim = norm.state_dim();
  c.hidden_layers = hidden_layers;
  c.hidden_width = hidden_width;
  c.seed = seed;
  c.stream = stream;
  return c;
}

CollocationSet sample_collocation(Index n_ode, double t_end, CounterRng& rng) {
  if (n_ode <= 0) throw ContractError("sample_collocation: n_ode must be positive");
  if (!(t_end > 0.0)) throw ContractError("sample_collocation: t_end must be positive");
  CollocationSet c;
  c.t_end = t_end;
  c.times.resize(n_ode);
  for (Index k = 0; k < n_ode; ++k) c.times(k) = rng.uniform(0.0, t_end);
  return c;
}

void LossWeights::validate() const {
  for (double w : {ic, ode, sol}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ContractError("loss weights must be finite and nonnegative");
  }
  if (ic + ode + sol <= 0.0) throw ContractError("loss weights: at least one must be positive");
}

std::string to_string(Reduction r) {
  return r == Reduction::max_square ? "max_square" : "mean_square";
}

Reduction reduction_from_string(const std::string& s) {
  if (s == "mean_square") return Reduction::mean_square;
  if (s == "max_square") return Reduction::max_square;
  throw ConfigError("unknown loss reduction '" + s + "'");
}

SupervisedData align_truth(const std::vector<ode::Trajectory>& truth,
                           const models::DynamicsModel& model,
                           const Eigen::Ref<const Vector>& times) {
  SupervisedData d;
  d.times = times;
  d.ics.resize(model.state_dim(), static_cast<Index>(truth.size()));
  for (size_t k = 0; k < truth.size(); ++k) {
    d.ics.col(static_cast<Index>(k)) = truth[k].front();
    d.states.push_back(ode::sample_at(truth[k], model, times));
  }
  return d;
}

// ---------------------------------------------------------------------------

nn::NodeId record_ic_loss(nn::Tape& tape, const StateNet& sn,
                          const Eigen::Ref<const Matrix>& ics,
                          Reduction reduction) {
  const Index n = sn.norm.state_dim();
  if (ics.cols() == 0) throw ContractError("ic loss: no initial conditions");
  Matrix in(n + 1, ics.cols());
  in.topRows(n) = sn.norm.features(ics);
  in.row(n).setZero();
  const nn::NodeId y = sn.net.record(tape, tape.input(std::move(in)));
  const nn::NodeId target = tape.input(sn.norm.encode(ics));
  return reduce(tape, tape.sub(y, target), reduction, static_cast<double>(ics.cols()));
}

nn::NodeId record_ode_loss(nn::Tape& tape, const StateNet& sn,
                           const models::DynamicsModel& model,
                           const CollocationSet& coll,
                           const Eigen::Ref<const Matrix>& ics,
                           Reduction reduction, std::optional<double> divisor) {
  const Index n = sn.norm.state_dim();
  const Index n_ic = ics.cols();
  const Index n_t = coll.size();
  if (n_ic == 0 || n_t == 0) throw ContractError("ode loss: empty IC or collocation set");
  if (model.state_dim() != n) throw ShapeError("ode loss: model and normalizer disagree on state size");
  const double t_end = sn.norm.t_end;

  const Matrix feats = sn.norm.features(ics);
  Matrix in(n + 1, n_ic * n_t);
  Matrix seed = Matrix::Zero(n + 1, n_ic * n_t);
  Vector times(n_ic * n_t);
  for (Index k = 0; k < n_ic; ++k) {
    in.block(0, k * n_t, n, n_t).colwise() = feats.col(k);
    in.block(n, k * n_t, 1, n_t) = coll.times.transpose() / t_end;
    times.segment(k * n_t, n_t) = coll.times;
  }
  seed.row(n).setOnes();

  const nn::NodeId y = sn.net.record(tape, tape.input(std::move(in), std::move(seed)));
  const nn::NodeId rate = tape.time_rate(y);
  const nn::NodeId x_hat = tape.affine_rows(y, sn.norm.output_scale, sn.norm.center);
  nn::NodeId f;
  try {
    f = tape.model_rhs(x_hat, model, times);
  } catch (const DomainError& e) {
    const Matrix& xv = tape.value(x_hat);
    for (Index c = 0; c < xv.cols(); ++c) {
      try {
        (void)model.rhs(xv.col(c), times(c));
      } catch (const DomainError& inner) {
        std::ostringstream msg;
        msg << "ode loss: model rejected prediction for ic " << c / n_t
            << " at t = " << times(c) << ": " << inner.what();
        throw DomainError(msg.str());
      }
    }
    throw;
  }
  const Vector rate_scale = (t_end / sn.norm.output_scale.array()).matrix();
  const nn::NodeId residual = tape.sub(rate, tape.scale_rows(f, rate_scale));
  return reduce(tape, residual, reduction,
                divisor.value_or(static_cast<double>(n_ic * n_t)));
}

nn::NodeId record_supervised_loss(nn::Tape& tape, const StateNet& sn,
                                  const SupervisedData& truth,
                                  Reduction reduction) {
  const Index n = sn.norm.state_dim();
  const Index n_traj = truth.ics.cols();
  const Index n_t = truth.times.size();
  if (n_traj == 0 || n_t == 0) throw ContractError("supervised loss: empty truth set");
  if (static_cast<Index>(truth.states.size()) != n_traj) throw ShapeError("supervised loss: one state block per IC required");
  if (truth.times.minCoeff() < 0.0 || truth.times.maxCoeff() > sn.norm.t_end) {
    throw RangeError("supervised loss: grid outside [0, t_end]");
  }
  const Matrix feats = sn.norm.features(truth.ics);
  Matrix in(n + 1, n_traj * n_t);
  Matrix target(n, n_traj * n_t);
  for (Index k = 0; k < n_traj; ++k) {
    const Matrix& s = truth.states[static_cast<size_t>(k)];
    if (s.rows() != n || s.cols() != n_t) throw RangeError("supervised loss: truth not aligned to the grid");
    in.block(0, k * n_t, n, n_t).colwise() = feats.col(k);
    in.block(n, k * n_t, 1, n_t) = truth.times.transpose() / sn.norm.t_end;
    target.middleCols(k * n_t, n_t) = sn.norm.encode(s);
  }
  const nn::NodeId y = sn.net.record(tape, tape.input(std::move(in)));
  const nn::NodeId r = tape.sub(y, tape.input(std::move(target)));
  return reduce(tape, r, reduction, static_cast<double>(n_traj * n_t));
}

double ic_loss(const StateNet& sn, const Eigen::Ref<const Matrix>& ics) {
  nn::Tape tape(sn.net.n_params());
  return tape.scalar(record_ic_loss(tape, sn, ics));
}

double ode_residual_loss(const StateNet& sn, const models::DynamicsModel& model,
                         const CollocationSet& coll,
                         const Eigen::Ref<const Matrix>& ics) {
  nn::Tape tape(sn.net.n_params());
  return tape.scalar(record_ode_loss(tape, sn, model, coll, ics));
}

double supervised_loss(const StateNet& sn, const SupervisedData& truth) {
  nn::Tape tape(sn.net.n_params());
  return tape.scalar(record_supervised_loss(tape, sn, truth));
}

RecordedLoss total_loss(nn::Tape& tape, const LossWeights& weights,
                        const StateNet& sn, const models::DynamicsModel& model,
                        const CollocationSet& coll,
                        const Eigen::Ref<const Matrix>& ics,
                        const SupervisedData* truth) {
  weights.validate();
  RecordedLoss out{};
  std::vector<nn::NodeId> terms;
  std::vector<double> coeffs;
  const nn::NodeId ic = record_ic_loss(tape, sn, ics);
  const nn::NodeId ode = record_ode_loss(tape, sn, model, coll, ics);
  terms = {ic, ode};
  coeffs = {weights.ic, weights.ode};
  out.breakdown.l_ic = tape.scalar(ic);
  out.breakdown.l_ode = tape.scalar(ode);
  if (truth != nullptr) {
    const nn::NodeId sol = record_supervised_loss(tape, sn, *truth);
    terms.push_back(sol);
    coeffs.push_back(weights.sol);
    out.breakdown.l_sol = tape.scalar(sol);
  }
  out.root = tape.weighted_sum(terms, coeffs);
  out.breakdown.total = tape.scalar(out.root);
  return out;
}

// ---------------------------------------------------------------------------

Vector TermGradients::combine(const LossWeights& w) const {
  Vector g = w.ic * g_ic + w.ode * g_ode;
  if (g_sol.size() != 0) g += w.sol * g_sol;
  return g;
}

double TermGradients::weighted(const LossWeights& w) const {
  double v = w.ic * values.l_ic + w.ode * values.l_ode;
  if (g_sol.size() != 0) v += w.sol * values.l_sol;
  return v;
}

PinnObjective::PinnObjective(std::shared_ptr<const models::DynamicsModel> model,
                             Matrix ics, CollocationSet coll,
                             ObjectiveOptions options)
    : model_(std::move(model)), ics_(std::move(ics)), coll_(std::move(coll)),
      options_(options) {
  if (!model_) throw ContractError("objective: null model");
  if (ics_.rows() != model_->state_dim() || ics_.cols() == 0) {
    throw ShapeError("objective: IC matrix must be state_dim x n_ic with n_ic > 0");
  }
  if (coll_.size() == 0) throw ContractError("objective: empty collocation set");
  if (options_.columns_per_chunk <= 0) throw ContractError("objective: chunk size must be positive");
}

void PinnObjective::set_supervised(SupervisedData truth) { truth_ = std::move(truth); }

void PinnObjective::set_collocation(CollocationSet coll) {
  if (coll.size() == 0) throw ContractError("objective: empty collocation set");
  coll_ = std::move(coll);
}

std::pair<double, Vector> PinnObjective::ic_term(const StateNet& sn,
                                                 bool with_grad) const {
  nn::Tape tape(sn.net.n_params());
  const nn::NodeId root = record_ic_loss(tape, sn, ics_, options_.reduction);
  const double v = tape.scalar(root);
  if (!with_grad) return {v, Vector()};
  tape.backward(root);
  return {v, tape.param_grad()};
}

std::pair<double, Vector> PinnObjective::ode_term(const StateNet& sn,
                                                  bool with_grad) const {
  const Index n_ic = ics_.cols();
  const Index n_t = coll_.size();
  const Index width = std::min(options_.columns_per_chunk, n_t);
  const Index slices = (n_t + width - 1) / width;
  const long n_chunks = static_cast<long>(n_ic * slices);
  const double divisor = static_cast<double>(n_ic * n_t);
  std::vector<double> values(static_cast<size_t>(n_chunks));
  std::vector<Vector> grads(static_cast<size_t>(n_chunks));
  parallel_for(n_chunks, options_.threads, [&](long c) {
    const Index ic = static_cast<Index>(c) / slices;
    const Index first = (static_cast<Index>(c) % slices) * width;
    CollocationSet part{coll_.times.segment(first, std::min(width, n_t - first)), coll_.t_end};
    nn::Tape tape(sn.net.n_params());
    const nn::NodeId root = record_ode_loss(tape, sn, *model_, part, ics_.col(ic),
                                            options_.reduction, divisor);
    values[static_cast<size_t>(c)] = tape.scalar(root);
    if (with_grad) {
      tape.backward(root);
      grads[static_cast<size_t>(c)] = tape.param_grad();
    }
  });

  if (options_.reduction == Reduction::max_square) {
    size_t best = 0;
    for (size_t c = 1; c < values.size(); ++c) {
      if (values[c] > values[best]) best = c;
    }
    return {values[best], with_grad ? grads[best] : Vector()};
  }
  double total = 0.0;
  Vector g = with_grad ? Vector::Zero(sn.net.n_params()) : Vector();
  for (size_t c = 0; c < values.size(); ++c) {
    total += values[c];
    if (with_grad) g += grads[c];
  }
  return {total, std::move(g)};
}

TermGradients PinnObjective::gradients(const StateNet& sn) const {
  TermGradients out;
  auto [l_ic, g_ic] = ic_term(sn, true);
  out.values.l_ic = l_ic;
  out.g_ic = std::move(g_ic);
  auto [l_ode, g_ode] = ode_term(sn, true);
  out.values.l_ode = l_ode;
  out.g_ode = std::move(g_ode);
  if (truth_) {
    nn::Tape tape(sn.net.n_params());
    const nn::NodeId root = record_supervised_loss(tape, sn, *truth_, options_.reduction);
    out.values.l_sol = tape.scalar(root);
    tape.backward(root);
    out.g_sol = tape.param_grad();
  }
  return out;
}

LossBreakdown PinnObjective::values(const StateNet& sn) const {
  LossBreakdown b;
  b.l_ic = ic_term(sn, false).first;
  b.l_ode = ode_term(sn, false).first;
  if (truth_) {
    nn::Tape tape(sn.net.n_params());
    b.l_sol = tape.scalar(record_supervised_loss(tape, sn, *truth_, options_.reduction));
  }
  return b;
}

}  // namespace gridpinn::pinn
