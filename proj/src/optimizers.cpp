// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/optimizers.hpp"

#include "gridpinn/rng.hpp"

#include <cmath>
#include <string>

namespace gridpinn::opt {

void LrSchedule::validate() const {
  if (!(initial > 0.0) || !std::isfinite(initial)) throw ConfigError("lr_schedule.initial must be positive");
  if (!(decay > 0.0) || decay > 1.0) throw ConfigError("lr_schedule.decay must lie in (0, 1]");
  if (period < 1) throw ConfigError("lr_schedule.period must be at least 1");
}

double lr_at(const LrSchedule& schedule, long epoch) {
  if (epoch < 0) throw ContractError("lr_at: negative epoch");
  return schedule.initial * std::pow(schedule.decay, static_cast<double>(epoch / schedule.period));
}

void adam_step(AdamState& state, Vector& params, const Eigen::Ref<const Vector>& grad,
               double lr, long epoch) {
  if (grad.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeError("adam_step: size mismatch");
  }
  if (!grad.allFinite()) throw NumericalError("adam_step: non-finite gradient", epoch);
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + state.eps);
}

// ---------------------------------------------------------------------------
// Line search

bool strong_wolfe_holds(double f0, double slope0, double f1, double slope1,
                        double step, double c1, double c2) {
  return f1 <= f0 + c1 * step * slope0 && std::abs(slope1) <= -c2 * slope0;
}

namespace {

struct Probe {
  double a;
  double f;
  double slope;
  Vector x;
  Vector g;
};

// Minimizer of the cubic through (a, f, slope) at both ends, or NaN.
double cubic_minimizer(const Probe& lo, const Probe& hi) {
  const double d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (lo.a - hi.a);
  const double disc = d1 * d1 - lo.slope * hi.slope;
  if (disc < 0.0) return std::nan("");
  const double d2 = std::copysign(std::sqrt(disc), hi.a - lo.a);
  return hi.a - (hi.a - lo.a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
}

}  // namespace

LineSearchResult wolfe_line_search(const Objective& f, const Vector& x, double f0,
                                   const Vector& g0, const Vector& d,
                                   double init_step, const WolfeOptions& options) {
  const double slope0 = g0.dot(d);
  if (!(slope0 < 0.0)) throw ContractError("wolfe_line_search: direction is not a descent direction");
  if (!(init_step > 0.0)) throw ContractError("wolfe_line_search: initial step must be positive");
  const double c1 = options.c1;
  const double c2 = options.c2;
  int evals = 0;

  auto probe = [&](double a) {
    if (evals >= options.max_evaluations) {
      throw SearchError("wolfe_line_search: evaluation budget exhausted");
    }
    ++evals;
    Probe p;
    p.a = a;
    p.x = x + a * d;
    p.g.resize(x.size());
    p.f = f(p.x, p.g);
    p.slope = std::isfinite(p.f) ? p.g.dot(d) : std::nan("");
    return p;
  };
  auto done = [&](Probe p) {
    return LineSearchResult{p.a, p.f, std::move(p.x), std::move(p.g), evals};
  };
  auto sufficient = [&](const Probe& p) {
    return std::isfinite(p.f) && p.f <= f0 + c1 * p.a * slope0;
  };

  auto zoom = [&](Probe lo, Probe hi) {
    for (;;) {
      const double width = std::abs(hi.a - lo.a);
      if (width <= 1e-16 * std::max(1.0, std::abs(lo.a))) {
        throw SearchError("wolfe_line_search: bracket collapsed");
      }
      double a = std::nan("");
      if (std::isfinite(hi.f) && std::isfinite(hi.slope)) a = cubic_minimizer(lo, hi);
      const double left = std::min(lo.a, hi.a) + 0.1 * width;
      const double right = std::max(lo.a, hi.a) - 0.1 * width;
      if (!std::isfinite(a) || a < left || a > right) a = 0.5 * (lo.a + hi.a);
      Probe p = probe(a);
      if (!sufficient(p) || p.f >= lo.f) {
        hi = std::move(p);
      } else {
        if (std::abs(p.slope) <= -c2 * slope0) return done(std::move(p));
        if (p.slope * (hi.a - lo.a) >= 0.0) hi = std::move(lo);
        lo = std::move(p);
      }
    }
  };

  Probe prev{0.0, f0, slope0, x, g0};
  double a = std::min(init_step, options.max_step);
  for (int i = 0;; ++i) {
    Probe p = probe(a);
    if (!sufficient(p) || (i > 0 && p.f >= prev.f)) return zoom(std::move(prev), std::move(p));
    if (std::abs(p.slope) <= -c2 * slope0) return done(std::move(p));
    if (p.slope >= 0.0) return zoom(std::move(p), std::move(prev));
    if (a >= options.max_step) throw SearchError("wolfe_line_search: step limit reached");
    prev = std::move(p);
    a = std::min(2.0 * a, options.max_step);
  }
}

// ---------------------------------------------------------------------------
// L-BFGS

Vector lbfgs_direction(const LbfgsState& state, const Vector& g) {
  Vector q = g;
  const size_t m = state.history.size();
  std::vector<double> alpha(m);
  for (size_t k = m; k-- > 0;) {
    const CurvaturePair& p = state.history[k];
    alpha[k] = p.rho * p.s.dot(q);
    q -= alpha[k] * p.y;
  }
  if (m > 0) {
    const CurvaturePair& last = state.history.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (size_t k = 0; k < m; ++k) {
    const CurvaturePair& p = state.history[k];
    const double beta = p.rho * p.y.dot(q);
    q += (alpha[k] - beta) * p.s;
  }
  return -q;
}

LbfgsStepInfo lbfgs_step(LbfgsState& state, Vector& x, const Objective& f,
                         const LbfgsOptions& options) {
  LbfgsStepInfo info;
  if (!state.f) {
    state.g.resize(x.size());
    state.f = f(x, state.g);
    ++info.evaluations;
    if (!std::isfinite(*state.f) || !state.g.allFinite()) {
      throw NumericalError("lbfgs: non-finite objective at the start point", state.iterations);
    }
  }
  info.f_before = *state.f;
  info.f_after = *state.f;
  info.grad_norm = state.g.norm();
  if (info.grad_norm == 0.0) return info;

  Vector d = lbfgs_direction(state, state.g);
  if (!(d.dot(state.g) < 0.0) || !d.allFinite()) {
    state.history.clear();
    d = -state.g;
  }
  const double init = state.history.empty()
                          ? std::min(1.0, 1.0 / state.g.lpNorm<1>()) * options.init_step
                          : options.init_step;

  Vector x_new;
  Vector g_new;
  double f_new = 0.0;
  try {
    LineSearchResult ls = wolfe_line_search(f, x, *state.f, state.g, d, init, options.wolfe);
    info.evaluations += ls.evaluations;
    info.step = ls.step;
    info.wolfe_ok = true;
    x_new = std::move(ls.x);
    g_new = std::move(ls.g);
    f_new = ls.f;
  } catch (const SearchError&) {
    info.evaluations += options.wolfe.max_evaluations;
    ++state.fallbacks;
    info.fallback = true;
    state.history.clear();
    const double a = options.fallback_step / std::max(1.0, info.grad_norm);
    x_new = x - a * state.g;
    g_new.resize(x.size());
    f_new = f(x_new, g_new);
    ++info.evaluations;
    if (!(std::isfinite(f_new) && f_new < *state.f)) {
      ++state.iterations;
      return info;
    }
    info.step = a;
  }

  Vector s = x_new - x;
  Vector y = g_new - state.g;
  const double sy = s.dot(y);
  if (sy > options.skip_tolerance * s.norm() * y.norm()) {
    state.history.push_back({std::move(s), std::move(y), 1.0 / sy});
    while (static_cast<int>(state.history.size()) > options.memory) state.history.pop_front();
  } else {
    ++state.skipped_pairs;
  }
  x = std::move(x_new);
  state.g = std::move(g_new);
  state.f = f_new;
  ++state.iterations;
  info.moved = true;
  info.f_after = f_new;
  info.grad_norm = state.g.norm();
  return info;
}

// ---------------------------------------------------------------------------
// Hessian conditioning

Vector hessian_vector_product(const GradientFn& grad, const Vector& x,
                              const Vector& v, double h) {
  if (!(h > 0.0)) throw ContractError("hessian_vector_product: step must be positive");
  return (grad(x + h * v) - grad(x - h * v)) / (2.0 * h);
}

namespace {

struct PowerResult {
  double lambda;
  int iterations;
  bool converged;
};

template <typename Apply>
PowerResult power_iteration(const Apply& apply, Vector v, const HessianOptions& o) {
  v.normalize();
  double lambda = 0.0;
  for (int it = 1; it <= o.max_iterations; ++it) {
    const Vector w = apply(v);
    const double next = v.dot(w);
    const double wn = w.norm();
    if (!std::isfinite(next) || !std::isfinite(wn)) {
      throw NumericalError("hessian_condition_estimate: non-finite product", it);
    }
    if (wn == 0.0) return {0.0, it, true};
    const bool converged = it > 1 && std::abs(next - lambda) <= o.tolerance * std::abs(next);
    lambda = next;
    v = w / wn;
    if (converged) return {lambda, it, true};
  }
  return {lambda, o.max_iterations, false};
}

}  // namespace

ConditionEstimate hessian_condition_estimate(const GradientFn& grad, const Vector& x,
                                             const HessianOptions& options) {
  if (options.max_iterations < 2) throw ContractError("hessian_condition_estimate: need at least 2 iterations");
  CounterRng rng(options.seed, streams::kHessianProbe);
  Vector v0(x.size());
  for (Index i = 0; i < v0.size(); ++i) v0(i) = rng.uniform(-1.0, 1.0);

  auto hv = [&](const Vector& v) { return hessian_vector_product(grad, x, v, options.fd_step); };
  const PowerResult top = power_iteration(hv, v0, options);
  const double sigma = 1.1 * top.lambda;
  auto shifted = [&](const Vector& v) -> Vector { return sigma * v - hv(v); };
  const PowerResult low = power_iteration(shifted, v0, options);

  ConditionEstimate e;
  e.lambda_max = top.lambda;
  e.lambda_min = sigma - low.lambda;
  e.ratio = e.lambda_max / std::max(e.lambda_min, 1e-15);
  e.iterations_max = top.iterations;
  e.iterations_min = low.iterations;
  e.approximate = !top.converged || !low.converged;
  return e;
}

}  // namespace gridpinn::opt
