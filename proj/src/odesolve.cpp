// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/odesolve.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace gridpinn::ode {

namespace {

class TrajectoryBuilder {
 public:
  TrajectoryBuilder(std::string name, Index dim) : name_(std::move(name)), dim_(dim) {}

  void push(double t, const Vector& x) {
    times_.push_back(t);
    states_.push_back(x);
  }

  Trajectory finish() && {
    Trajectory traj;
    traj.model_name = std::move(name_);
    traj.times = Eigen::Map<const Vector>(times_.data(), static_cast<Index>(times_.size()));
    traj.states.resize(dim_, static_cast<Index>(states_.size()));
    for (size_t k = 0; k < states_.size(); ++k) {
      traj.states.col(static_cast<Index>(k)) = states_[k];
    }
    return traj;
  }

 private:
  std::string name_;
  Index dim_;
  std::vector<double> times_;
  std::vector<Vector> states_;
};

void check_span(TimeSpan span) {
  if (!(span.end > span.start) || !std::isfinite(span.start) || !std::isfinite(span.end)) {
    throw ContractError("time span must satisfy end > start");
  }
}

void check_initial(const models::DynamicsModel& model, const Eigen::Ref<const Vector>& x0) {
  if (x0.size() != model.state_dim()) throw ShapeError("initial state size mismatch");
  if (!x0.allFinite()) throw DomainError("initial state is not finite");
}

// Model errors (e.g. domain errors from a non-finite intermediate) are
// reported as divergence at the failing time.
Vector eval_rhs(const models::DynamicsModel& model, const Vector& x, double t) {
  if (!x.allFinite()) {
    throw DivergenceError("integration diverged (non-finite state) at t = " +
                              std::to_string(t),
                          t);
  }
  Vector f = model.rhs(x, t);
  if (!f.allFinite()) {
    throw DivergenceError("integration diverged (non-finite rhs) at t = " +
                              std::to_string(t),
                          t);
  }
  return f;
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                 a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// error coefficients: b5 - b4
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

void Trajectory::validate() const {
  if (times.size() < 1 || states.cols() != times.size()) {
    throw ContractError("trajectory: times and states must have equal nonzero length");
  }
  for (Index k = 1; k < times.size(); ++k) {
    if (!(times(k) > times(k - 1))) throw ContractError("trajectory: times not strictly increasing");
  }
}

void SolverConfig::validate() const {
  if (!(fixed_step > 0.0) || !(rel_tol > 0.0) || !(abs_tol > 0.0) ||
      !(newton.tolerance > 0.0) || newton.max_iterations < 1) {
    throw ConfigError("solver steps and tolerances must be strictly positive");
  }
}

std::string to_string(Method m) {
  switch (m) {
    case Method::rk4: return "rk4";
    case Method::rk45: return "rk45";
    case Method::implicit_trapezoidal: return "implicit_trapezoidal";
  }
  return "rk45";
}

Method method_from_string(const std::string& s) {
  if (s == "rk4") return Method::rk4;
  if (s == "rk45") return Method::rk45;
  if (s == "implicit_trapezoidal") return Method::implicit_trapezoidal;
  throw ConfigError("unknown solver method: " + s);
}

Trajectory rk4_fixed(const models::DynamicsModel& model,
                     const Eigen::Ref<const Vector>& x0, TimeSpan span,
                     double h) {
  if (!(h > 0.0)) throw ContractError("rk4_fixed: step must be positive");
  check_span(span);
  check_initial(model, x0);
  TrajectoryBuilder out(std::string(model.name()), model.state_dim());
  Vector x = x0;
  out.push(span.start, x);
  const long n_full = static_cast<long>(std::floor((span.end - span.start) / h));
  double t = span.start;
  for (long k = 0;; ++k) {
    double t_next = span.start + static_cast<double>(k + 1) * h;
    if (k >= n_full || t_next >= span.end) t_next = span.end;
    const double step = t_next - t;
    if (step <= 0.0) break;
    const Vector k1 = eval_rhs(model, x, t);
    const Vector k2 = eval_rhs(model, x + 0.5 * step * k1, t + 0.5 * step);
    const Vector k3 = eval_rhs(model, x + 0.5 * step * k2, t + 0.5 * step);
    const Vector k4 = eval_rhs(model, x + step * k3, t + step);
    x += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite()) {
      throw DivergenceError("rk4 diverged at t = " + std::to_string(t_next), t_next);
    }
    t = t_next;
    out.push(t, x);
    if (t >= span.end) break;
  }
  return std::move(out).finish();
}

Trajectory rk45_adaptive(const models::DynamicsModel& model,
                         const Eigen::Ref<const Vector>& x0, TimeSpan span,
                         double rel_tol, double abs_tol, AdaptiveStats* stats) {
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) {
    throw ContractError("rk45_adaptive: tolerances must be positive");
  }
  check_span(span);
  check_initial(model, x0);
  const Index n = model.state_dim();
  AdaptiveStats local;
  TrajectoryBuilder out(std::string(model.name()), n);

  auto scaled_norm = [&](const Vector& v, const Vector& ya, const Vector& yb) {
    double sum = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double sk = abs_tol + rel_tol * std::max(std::abs(ya(i)), std::abs(yb(i)));
      sum += (v(i) / sk) * (v(i) / sk);
    }
    return std::sqrt(sum / static_cast<double>(n));
  };

  Vector x = x0;
  double t = span.start;
  out.push(t, x);
  Vector k1 = eval_rhs(model, x, t);
  ++local.rhs_evaluations;

  // Initial step (Hairer, Norsett & Wanner, II.4).
  double h;
  {
    const double d0 = scaled_norm(x, x, x);
    const double d1 = scaled_norm(k1, x, x);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span.end - span.start);
    const Vector x1 = x + h0 * k1;
    const Vector f1 = eval_rhs(model, x1, t + h0);
    ++local.rhs_evaluations;
    const double d2 = scaled_norm(f1 - k1, x, x) / h0;
    const double dmax = std::max(d1, d2);
    const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                    : std::pow(0.01 / dmax, 1.0 / 5.0);
    h = std::min(100.0 * h0, h1);
  }

  constexpr double safety = 0.9;
  constexpr double beta = 0.04;
  constexpr double expo1 = 0.2 - beta * 0.75;
  constexpr double fac_min = 0.2;   // max shrink 1/5
  constexpr double fac_max = 10.0;  // max growth
  double err_old = 1e-4;
  bool last_rejected = false;

  while (t < span.end) {
    if (h < 1e-14) {
      throw StiffnessError(
          "rk45 step size underflow at t = " + std::to_string(t) +
              "; the problem looks stiff, use implicit_trapezoidal",
          t);
    }
    bool final_step = false;
    if (t + h >= span.end) {
      h = span.end - t;
      final_step = true;
    }
    const Vector k2 = eval_rhs(model, x + h * a21 * k1, t + c2 * h);
    const Vector k3 = eval_rhs(model, x + h * (a31 * k1 + a32 * k2), t + c3 * h);
    const Vector k4 = eval_rhs(model, x + h * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * h);
    const Vector k5 = eval_rhs(model, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * h);
    const Vector k6 = eval_rhs(model, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t + h);
    const Vector x_new = x + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    const double t_new = final_step ? span.end : t + h;
    const Vector k7 = eval_rhs(model, x_new, t_new);
    local.rhs_evaluations += 6;
    const Vector err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double err = scaled_norm(err_vec, x, x_new);
    if (!std::isfinite(err)) {
      throw DivergenceError("rk45 diverged at t = " + std::to_string(t), t);
    }

    const double fac11 = std::pow(std::max(err, 1e-300), expo1);
    if (err <= 1.0) {
      double fac = fac11 / std::pow(err_old, beta);
      fac = std::clamp(fac / safety, 1.0 / fac_max, 1.0 / fac_min);
      double h_new = h / fac;
      if (last_rejected) h_new = std::min(h_new, h);
      err_old = std::max(err, 1e-4);
      local.max_accepted_error = std::max(local.max_accepted_error, err);
      ++local.accepted;
      x = x_new;
      k1 = k7;
      t = t_new;
      out.push(t, x);
      last_rejected = false;
      if (final_step) break;
      h = h_new;
    } else {
      ++local.rejected;
      h = h / std::min(1.0 / fac_min, fac11 / safety);
      last_rejected = true;
    }
  }
  if (stats) *stats = local;
  return std::move(out).finish();
}

Trajectory implicit_trapezoidal(const models::DynamicsModel& model,
                                const Eigen::Ref<const Vector>& x0,
                                TimeSpan span, double h,
                                const NewtonConfig& newton) {
  if (!(h > 0.0)) throw ContractError("implicit_trapezoidal: step must be positive");
  check_span(span);
  check_initial(model, x0);
  const Index n = model.state_dim();
  const Matrix eye = Matrix::Identity(n, n);
  TrajectoryBuilder out(std::string(model.name()), n);
  Vector x = x0;
  double t = span.start;
  out.push(t, x);
  Vector fx = eval_rhs(model, x, t);
  const long n_full = static_cast<long>(std::floor((span.end - span.start) / h));

  for (long k = 0;; ++k) {
    double t_next = span.start + static_cast<double>(k + 1) * h;
    if (k >= n_full || t_next >= span.end) t_next = span.end;
    const double step = t_next - t;
    if (step <= 0.0) break;

    // Simplified Newton: the iteration matrix is refreshed once if the
    // first attempt stalls.
    Vector y = x + step * fx;  // explicit Euler predictor
    Vector fy;
    bool converged = false;
    double last_norm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    for (int attempt = 0; attempt < 2 && !converged; ++attempt) {
      const Vector& lin_point = attempt == 0 ? x : y;
      const Matrix jac = models::model_jacobian(model, lin_point, attempt == 0 ? t : t_next);
      const Eigen::PartialPivLU<Matrix> lu(eye - 0.5 * step * jac);
      if (attempt == 1 && !y.allFinite()) y = x;
      for (int it = 0; it < newton.max_iterations; ++it) {
        ++iterations;
        fy = eval_rhs(model, y, t_next);
        const Vector g = y - x - 0.5 * step * (fx + fy);
        const Vector dy = lu.solve(-g);
        y += dy;
        last_norm = dy.lpNorm<Eigen::Infinity>();
        if (!std::isfinite(last_norm)) break;
        if (last_norm <= newton.tolerance * (1.0 + y.lpNorm<Eigen::Infinity>())) {
          converged = true;
          break;
        }
      }
    }
    if (!converged) {
      throw ConvergenceError("implicit_trapezoidal: Newton failed at t = " +
                                 std::to_string(t_next) + " after " +
                                 std::to_string(iterations) + " iterations, residual " +
                                 std::to_string(last_norm),
                             iterations, last_norm);
    }
    x = y;
    fx = eval_rhs(model, x, t_next);
    t = t_next;
    out.push(t, x);
    if (t >= span.end) break;
  }
  return std::move(out).finish();
}

Trajectory integrate(const models::DynamicsModel& model,
                     const Eigen::Ref<const Vector>& x0, TimeSpan span,
                     const SolverConfig& config) {
  config.validate();
  switch (config.method) {
    case Method::rk4: return rk4_fixed(model, x0, span, config.fixed_step);
    case Method::rk45: return rk45_adaptive(model, x0, span, config.rel_tol, config.abs_tol);
    case Method::implicit_trapezoidal:
      return implicit_trapezoidal(model, x0, span, config.fixed_step, config.newton);
  }
  throw ConfigError("unknown solver method");
}

double stiffness_ratio(const models::DynamicsModel& model,
                       const Eigen::Ref<const Vector>& x, double t) {
  const Matrix jac = models::model_jacobian(model, x, t);
  const Eigen::EigenSolver<Matrix> es(jac, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) throw ConvergenceError("stiffness_ratio: eigen-solve failed", 0, 0.0);
  const Eigen::VectorXd mags = es.eigenvalues().cwiseAbs();
  double max_mag = 0.0;
  double min_mag = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < mags.size(); ++i) {
    if (mags(i) < 1e-12) continue;
    max_mag = std::max(max_mag, mags(i));
    min_mag = std::min(min_mag, mags(i));
  }
  if (max_mag == 0.0) throw DomainError("stiffness_ratio: all eigenvalues are zero (degenerate)");
  return max_mag / min_mag;
}

Matrix sample_at(const Trajectory& traj, const models::DynamicsModel& model,
                 const Eigen::Ref<const Vector>& query_times) {
  if (traj.size() < 1) throw ContractError("sample_at: empty trajectory");
  const double t0 = traj.times(0);
  const double t1 = traj.times(traj.size() - 1);
  Matrix out(traj.state_dim(), query_times.size());
  const double* begin = traj.times.data();
  const double* end = begin + traj.size();
  for (Index q = 0; q < query_times.size(); ++q) {
    const double tq = query_times(q);
    if (!(tq >= t0 && tq <= t1)) {
      throw RangeError("sample_at: query time " + std::to_string(tq) +
                       " outside [" + std::to_string(t0) + ", " + std::to_string(t1) + "]");
    }
    const double* it = std::lower_bound(begin, end, tq);
    const Index k = static_cast<Index>(it - begin);
    if (it != end && *it == tq) {
      out.col(q) = traj.states.col(k);
      continue;
    }
    const Index i0 = k - 1;
    const Index i1 = k;
    const double ta = traj.times(i0);
    const double tb = traj.times(i1);
    const double hstep = tb - ta;
    const double s = (tq - ta) / hstep;
    const Vector ya = traj.states.col(i0);
    const Vector yb = traj.states.col(i1);
    const Vector fa = model.rhs(ya, ta);
    const Vector fb = model.rhs(yb, tb);
    const double s2 = s * s;
    const double s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1;
    const double h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2;
    const double h11 = s3 - s2;
    out.col(q) = h00 * ya + h10 * hstep * fa + h01 * yb + h11 * hstep * fb;
  }
  return out;
}

void write_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << 't';
  for (Index i = 0; i < traj.state_dim(); ++i) out << ",x" << i;
  out << '\n';
  out << std::setprecision(17);
  for (Index k = 0; k < traj.size(); ++k) {
    out << traj.times(k);
    for (Index i = 0; i < traj.state_dim(); ++i) out << ',' << traj.states(i, k);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Trajectory read_csv(const std::filesystem::path& path, const std::string& model_name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty trajectory file: " + path.string());
  const Index cols = static_cast<Index>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 2 || line.rfind("t,", 0) != 0) throw IoError("bad trajectory header: " + path.string());
  TrajectoryBuilder b(model_name, cols - 1);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<Index>(vals.size()) != cols) throw IoError("ragged row in " + path.string());
    b.push(vals[0], Eigen::Map<const Vector>(vals.data() + 1, cols - 1));
  }
  Trajectory traj = std::move(b).finish();
  traj.validate();
  return traj;
}

}  // namespace gridpinn::ode
