// SPDX-License-Identifier: Apache-2.0
//
// First- and quasi-second-order optimizers over flat parameter vectors, and
// a Hessian conditioning estimate built from gradient differences.

#pragma once

#include "gridpinn/core.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>

namespace gridpinn::opt {

/// lr = initial * decay^floor(epoch / period).
struct LrSchedule {
  double initial = 0.01;
  double decay = 0.9;
  long period = 100;

  void validate() const;
};

double lr_at(const LrSchedule& schedule, long epoch);

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(Index n = 0) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

/// Bias-corrected Adam update in place. A non-finite gradient throws
/// NumericalError carrying `epoch`.
void adam_step(AdamState& state, Vector& params, const Eigen::Ref<const Vector>& grad,
               double lr, long epoch = -1);

/// Returns f(x) and writes the gradient into `grad`.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct WolfeOptions {
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_evaluations = 25;
  double max_step = 1e10;
};

struct LineSearchResult {
  double step = 0.0;
  double f = 0.0;
  Vector x;
  Vector g;
  int evaluations = 0;
};

/// Step length satisfying the strong Wolfe conditions along `d`, found by
/// bracketing and cubic-interpolation zoom. Throws ContractError for a
/// non-descent direction and SearchError when no acceptable step is found
/// within the evaluation budget.
LineSearchResult wolfe_line_search(const Objective& f, const Vector& x, double f0,
                                   const Vector& g0, const Vector& d,
                                   double init_step, const WolfeOptions& options = {});

/// True when `step` satisfies both strong Wolfe inequalities.
bool strong_wolfe_holds(double f0, double slope0, double f1, double slope1,
                        double step, double c1, double c2);

struct LbfgsOptions {
  int memory = 20;
  double init_step = 1.0;
  double skip_tolerance = 1e-10;  // skip pair when s'y <= tol ||s|| ||y||
  double fallback_step = 1e-3;    // gradient step length after a failed search
  WolfeOptions wolfe;
};

struct CurvaturePair {
  Vector s;
  Vector y;
  double rho;  // 1 / s'y
};

struct LbfgsState {
  std::deque<CurvaturePair> history;
  std::optional<double> f;  // cached objective at the current point
  Vector g;
  long iterations = 0;
  long skipped_pairs = 0;
  long fallbacks = 0;
};

struct LbfgsStepInfo {
  double f_before = 0.0;
  double f_after = 0.0;
  double step = 0.0;
  double grad_norm = 0.0;  // at the new point
  int evaluations = 0;
  bool moved = false;
  bool fallback = false;
  bool wolfe_ok = false;
};

/// Two-loop recursion direction -H g from the stored pairs.
Vector lbfgs_direction(const LbfgsState& state, const Vector& g);

/// One L-BFGS iteration in place. At a stationary point nothing moves.
LbfgsStepInfo lbfgs_step(LbfgsState& state, Vector& x, const Objective& f,
                         const LbfgsOptions& options = {});

/// Returns grad L at x.
using GradientFn = std::function<Vector(const Vector& x)>;

/// (grad(x + h v) - grad(x - h v)) / (2h).
Vector hessian_vector_product(const GradientFn& grad, const Vector& x,
                              const Vector& v, double h);

struct HessianOptions {
  double fd_step = 1e-5;
  int max_iterations = 500;
  double tolerance = 1e-6;  // relative change of the Rayleigh quotient
  std::uint64_t seed = 0;
};

struct ConditionEstimate {
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double ratio = 0.0;
  int iterations_max = 0;
  int iterations_min = 0;
  bool approximate = false;  // an iteration budget ran out
};

/// lambda_max by power iteration on H, lambda_min by power iteration on
/// sigma I - H with sigma = 1.1 lambda_max, ratio = lambda_max / max(lambda_min, 1e-15).
ConditionEstimate hessian_condition_estimate(const GradientFn& grad, const Vector& x,
                                             const HessianOptions& options = {});

}  // namespace gridpinn::opt
