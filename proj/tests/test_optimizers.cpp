// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/optimizers.hpp"
#include "gridpinn/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace gridpinn;
using namespace gridpinn::opt;

namespace {

/// f = 0.5 x' diag(d) x - b' x.
Objective quadratic(Vector d, Vector b) {
  return [d = std::move(d), b = std::move(b)](const Vector& x, Vector& g) {
    g = d.cwiseProduct(x) - b;
    return 0.5 * x.dot(d.cwiseProduct(x)) - b.dot(x);
  };
}

double rosenbrock(const Vector& x, Vector& g) {
  const double a = 1.0 - x(0);
  const double b = x(1) - x(0) * x(0);
  g.resize(2);
  g(0) = -2.0 * a - 400.0 * x(0) * b;
  g(1) = 200.0 * b;
  return a * a + 100.0 * b * b;
}

Objective square() {
  return [](const Vector& x, Vector& g) {
    g = 2.0 * x;
    return x.squaredNorm();
  };
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const LrSchedule s;
  CHECK(lr_at(s, 0) == 0.01);
  CHECK(lr_at(s, 99) == 0.01);
  CHECK(lr_at(s, 100) == doctest::Approx(0.009).epsilon(1e-15));
  CHECK(lr_at(s, 250) == doctest::Approx(0.0081).epsilon(1e-15));
  CHECK(lr_at(s, 1999) < lr_at(s, 1899));
  LrSchedule bad;
  bad.period = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.decay = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adam") {
  SUBCASE("first step moves by lr against the gradient sign") {
    AdamState st(3);
    Vector x = Vector::Zero(3);
    adam_step(st, x, Eigen::Vector3d(2.0, -0.5, 1e-3), 0.01);
    CHECK(x(0) == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(x(1) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(x(2) == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(st.step == 1);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    AdamState st(2);
    Vector x = Eigen::Vector2d(0.3, -0.7);
    adam_step(st, x, Vector::Zero(2), 0.01);
    CHECK(x == Eigen::Vector2d(0.3, -0.7));
  }
  SUBCASE("step size stays bounded") {
    CounterRng rng(4, 4);
    AdamState st(5);
    Vector x = Vector::Zero(5);
    const double lr = 0.01;
    for (int k = 0; k < 500; ++k) {
      Vector g(5);
      for (Index i = 0; i < 5; ++i) g(i) = rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform(-6.0, 6.0));
      const Vector before = x;
      adam_step(st, x, g, lr);
      CHECK((x - before).cwiseAbs().maxCoeff() <= lr / (1.0 - st.beta1));
    }
  }
  SUBCASE("non-finite gradient") {
    AdamState st(1);
    Vector x = Vector::Zero(1);
    CHECK_THROWS_AS(adam_step(st, x, Vector::Constant(1, NAN), 0.01, 12), NumericalError);
  }
  SUBCASE("minimizes a quadratic") {
    AdamState st(2);
    Vector x = Eigen::Vector2d(1.0, -1.0);
    Vector g;
    const Objective f = quadratic(Eigen::Vector2d(1.0, 3.0), Eigen::Vector2d(0.5, 0.3));
    for (int k = 0; k < 3000; ++k) {
      f(x, g);
      adam_step(st, x, g, 0.01);
    }
    CHECK((x - Eigen::Vector2d(0.5, 0.1)).norm() < 1e-3);
  }
}

TEST_CASE("strong Wolfe line search") {
  const Objective f = square();
  const Vector x = Vector::Ones(1);
  Vector g0;
  const double f0 = f(x, g0);

  SUBCASE("exact step is accepted at once") {
    const LineSearchResult r = wolfe_line_search(f, x, f0, g0, -Vector::Ones(1), 1.0);
    CHECK(r.step == 1.0);
    CHECK(r.evaluations == 1);
    CHECK(r.f == 0.0);
  }
  SUBCASE("overshooting step is cut back") {
    const Vector d = -g0;
    const LineSearchResult r = wolfe_line_search(f, x, f0, g0, d, 1.0);
    CHECK(strong_wolfe_holds(f0, g0.dot(d), r.f, r.g.dot(d), r.step, 1e-4, 0.9));
    CHECK(r.f < f0);
  }
  SUBCASE("tighter curvature constant still holds") {
    const Vector d = -g0;
    for (double c2 : {0.9, 0.5, 0.1, 0.01}) {
      WolfeOptions o;
      o.c2 = c2;
      const LineSearchResult r = wolfe_line_search(f, x, f0, g0, d, 5.0, o);
      CHECK(strong_wolfe_holds(f0, g0.dot(d), r.f, r.g.dot(d), r.step, o.c1, c2));
    }
  }
  SUBCASE("short initial step is extended") {
    const Vector d = -g0;
    const LineSearchResult r = wolfe_line_search(f, x, f0, g0, d, 1e-6);
    CHECK(strong_wolfe_holds(f0, g0.dot(d), r.f, r.g.dot(d), r.step, 1e-4, 0.9));
  }
  SUBCASE("ascent direction is rejected") {
    CHECK_THROWS_AS(wolfe_line_search(f, x, f0, g0, g0, 1.0), ContractError);
  }
  SUBCASE("unbounded descent exhausts the budget") {
    const Objective linear = [](const Vector& y, Vector& g) {
      g = -Vector::Ones(1);
      return -y(0);
    };
    Vector gl;
    const double fl = linear(x, gl);
    WolfeOptions o;
    o.max_step = 1e3;
    CHECK_THROWS_AS(wolfe_line_search(linear, x, fl, gl, Vector::Ones(1), 1.0, o), SearchError);
  }
  CHECK(strong_wolfe_holds(1.0, -1.0, 0.5, 0.0, 1.0, 1e-4, 0.9));
  CHECK_FALSE(strong_wolfe_holds(1.0, -1.0, 1.5, 0.0, 1.0, 1e-4, 0.9));
  CHECK_FALSE(strong_wolfe_holds(1.0, -1.0, 0.5, -0.95, 1.0, 1e-4, 0.9));
}

TEST_CASE("lbfgs") {
  SUBCASE("two-loop recursion without history is steepest descent") {
    const LbfgsState st;
    CHECK(lbfgs_direction(st, Eigen::Vector2d(1.0, -2.0)) == Eigen::Vector2d(-1.0, 2.0));
  }
  SUBCASE("convex quadratic with minimum zero") {
    Vector d(50);
    for (Index i = 0; i < 50; ++i) d(i) = 1.0 + static_cast<double>(i % 5);
    const Objective f = quadratic(d, Vector::Zero(50));
    LbfgsState st;
    Vector x = Vector::Ones(50);
    LbfgsStepInfo info;
    int it = 0;
    while (it < 50) {
      info = lbfgs_step(st, x, f, {});
      ++it;
      CHECK(info.wolfe_ok);
      CHECK(info.f_after <= info.f_before);
      if (info.grad_norm < 1e-10) break;
    }
    CHECK(info.grad_norm < 1e-10);
    CHECK(it == 12);
    CHECK(st.skipped_pairs == 0);
  }
  SUBCASE("ill-conditioned quadratic with offset") {
    const Index n = 50;
    const Vector d = Vector::LinSpaced(n, 1.0, 100.0);
    const Vector b = Vector::LinSpaced(n, -1.0, 1.0);
    const Objective f = quadratic(d, b);
    LbfgsState st;
    Vector x = Vector::Zero(n);
    for (int it = 0; it < 60; ++it) lbfgs_step(st, x, f, {});
    CHECK((x - b.cwiseQuotient(d)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(st.g.norm() < 1e-6);
  }
  SUBCASE("stationary point does not move") {
    LbfgsState st;
    Vector x = Vector::Zero(3);
    const LbfgsStepInfo info = lbfgs_step(st, x, square(), {});
    CHECK_FALSE(info.moved);
    CHECK(info.grad_norm == 0.0);
    CHECK(x.isZero(0.0));
  }
  SUBCASE("rosenbrock") {
    LbfgsState st;
    Vector x = Eigen::Vector2d(-1.2, 1.0);
    for (int it = 0; it < 200 && (it == 0 || st.g.norm() > 1e-10); ++it) lbfgs_step(st, x, rosenbrock, {});
    CHECK((x - Eigen::Vector2d(1.0, 1.0)).norm() < 1e-8);
  }
  SUBCASE("memory bound") {
    LbfgsOptions o;
    o.memory = 3;
    LbfgsState st;
    Vector x = Vector::Zero(10);
    const Objective f = quadratic(Vector::LinSpaced(10, 1.0, 30.0), Vector::Ones(10));
    for (int it = 0; it < 8; ++it) lbfgs_step(st, x, f, o);
    CHECK(st.history.size() <= 3);
  }
  SUBCASE("non-finite start") {
    LbfgsState st;
    Vector x = Vector::Constant(1, NAN);
    CHECK_THROWS_AS(lbfgs_step(st, x, square(), {}), NumericalError);
  }
}

TEST_CASE("Hessian products and conditioning") {
  // f = sum_i exp(x_i) + x_0^2 x_1, with a dense Hessian.
  const GradientFn grad = [](const Vector& x) {
    Vector g = x.array().exp().matrix();
    g(0) += 2.0 * x(0) * x(1);
    g(1) += x(0) * x(0);
    return g;
  };
  const Vector x = Eigen::Vector3d(0.3, -0.2, 0.5);
  const Vector u = Eigen::Vector3d(1.0, 2.0, -1.0);
  const Vector v = Eigen::Vector3d(-0.5, 0.4, 1.5);
  const double uhv = u.dot(hessian_vector_product(grad, x, v, 1e-5));
  const double vhu = v.dot(hessian_vector_product(grad, x, u, 1e-5));
  CHECK(std::abs(uhv - vhu) < 1e-4);
  CHECK_THROWS_AS(hessian_vector_product(grad, x, v, 0.0), ContractError);

  const GradientFn diag = [](const Vector& y) { return Eigen::Vector2d(y(0), 10.0 * y(1)).eval(); };
  const ConditionEstimate e = hessian_condition_estimate(diag, Vector::Zero(2));
  CHECK(std::abs(e.ratio - 10.0) / 10.0 < 0.1);
  CHECK(e.lambda_max == doctest::Approx(10.0).epsilon(1e-4));
  CHECK_FALSE(e.approximate);

  const GradientFn iso = [](const Vector& y) { return (3.0 * y).eval(); };
  const ConditionEstimate flat = hessian_condition_estimate(iso, Vector::Ones(4));
  CHECK(flat.ratio == doctest::Approx(1.0).epsilon(1e-6));

  HessianOptions tight;
  tight.max_iterations = 2;
  tight.tolerance = 0.0;
  const GradientFn spread = [](const Vector& y) {
    return Vector(Vector::LinSpaced(y.size(), 1.0, 1.05).cwiseProduct(y));
  };
  CHECK(hessian_condition_estimate(spread, Vector::Zero(20), tight).approximate);
}
