// SPDX-License-Identifier: Apache-2.0
//
// Reference integrators used to produce ground-truth trajectories.

#pragma once

#include "gridpinn/core.hpp"
#include "gridpinn/psmodels.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace gridpinn::ode {

/// Time stamps with one state column per stamp. Times are strictly
/// increasing and states.cols() == times.size() >= 1.
struct Trajectory {
  Vector times;
  Matrix states;  // state_dim x n
  std::string model_name;

  Index size() const { return times.size(); }
  Index state_dim() const { return states.rows(); }
  Vector front() const { return states.col(0); }
  Vector back() const { return states.col(states.cols() - 1); }

  /// Throws ContractError if the invariants above do not hold.
  void validate() const;
};

struct TimeSpan {
  double start = 0.0;
  double end = 0.0;
};

struct NewtonConfig {
  double tolerance = 1e-10;  // relative to 1 + ||x||_inf
  int max_iterations = 20;
};

enum class Method { rk4, rk45, implicit_trapezoidal };

struct SolverConfig {
  Method method = Method::rk45;
  double fixed_step = 1e-4;  // rk4 / implicit_trapezoidal
  double rel_tol = 1e-10;    // rk45
  double abs_tol = 1e-10;    // rk45
  NewtonConfig newton;

  void validate() const;
};

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Classical fourth-order Runge-Kutta with a final short step landing on
/// span.end exactly.
Trajectory rk4_fixed(const models::DynamicsModel& model,
                     const Eigen::Ref<const Vector>& x0, TimeSpan span,
                     double h);

/// Statistics of an adaptive run, for diagnostics and tests.
struct AdaptiveStats {
  long accepted = 0;
  long rejected = 0;
  long rhs_evaluations = 0;
  double max_accepted_error = 0.0;  // scaled error norm of accepted steps
};

/// Dormand-Prince 5(4) with PI step control, FSAL. Only accepted steps are
/// stored. Step sizes below 1e-14 s raise StiffnessError.
Trajectory rk45_adaptive(const models::DynamicsModel& model,
                         const Eigen::Ref<const Vector>& x0, TimeSpan span,
                         double rel_tol, double abs_tol,
                         AdaptiveStats* stats = nullptr);

/// Trapezoidal rule x+ = x + h/2 (f(x) + f(x+)) solved by Newton with a
/// finite-difference Jacobian.
Trajectory implicit_trapezoidal(const models::DynamicsModel& model,
                                const Eigen::Ref<const Vector>& x0,
                                TimeSpan span, double h,
                                const NewtonConfig& newton = {});

Trajectory integrate(const models::DynamicsModel& model,
                     const Eigen::Ref<const Vector>& x0, TimeSpan span,
                     const SolverConfig& config);

/// max |lambda| / min_{lambda != 0} |lambda| over the eigenvalues of the
/// finite-difference Jacobian at (x, t).
double stiffness_ratio(const models::DynamicsModel& model,
                       const Eigen::Ref<const Vector>& x, double t = 0.0);

/// Cubic Hermite interpolation between stored steps, using slopes
/// re-evaluated from the model. Queries must lie inside the stored range.
Matrix sample_at(const Trajectory& traj, const models::DynamicsModel& model,
                 const Eigen::Ref<const Vector>& query_times);

/// CSV with header `t,x0,...,x{n-1}`, 17 significant digits, LF endings.
void write_csv(const Trajectory& traj, const std::filesystem::path& path);
Trajectory read_csv(const std::filesystem::path& path,
                    const std::string& model_name = {});

}  // namespace gridpinn::ode
