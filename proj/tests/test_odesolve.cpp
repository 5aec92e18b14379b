// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/odesolve.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace gridpinn;
using gridpinn::testing::decay_model;

TEST_CASE("rk4 on exponential decay") {
  const auto m = decay_model();
  const Vector x0 = Vector::Ones(1);
  const auto tr = ode::rk4_fixed(*m, x0, {0.0, 1.0}, 0.01);
  CHECK(tr.times(tr.size() - 1) == 1.0);
  CHECK(std::abs(tr.back()(0) - std::exp(-1.0)) < 1e-9);

  SUBCASE("fourth-order convergence") {
    const double e1 = std::abs(ode::rk4_fixed(*m, x0, {0.0, 1.0}, 0.1).back()(0) - std::exp(-1.0));
    const double e2 = std::abs(ode::rk4_fixed(*m, x0, {0.0, 1.0}, 0.05).back()(0) - std::exp(-1.0));
    CHECK(e1 / e2 >= 14.0);
    CHECK(e1 / e2 <= 18.0);
  }

  SUBCASE("final short step lands on the end time") {
    const auto odd = ode::rk4_fixed(*m, x0, {0.0, 1.0}, 0.3);
    CHECK(odd.times(odd.size() - 1) == 1.0);
    odd.validate();
  }
}

TEST_CASE("rk4 on a constant field is exact") {
  const auto m = decay_model(2, 0.0);
  const Vector x0 = Eigen::Vector2d(1.25, -3.0);
  const auto tr = ode::rk4_fixed(*m, x0, {0.0, 2.0}, 0.1);
  for (Index k = 0; k < tr.size(); ++k) CHECK(tr.states.col(k) == x0);
}

TEST_CASE("rk4 reports divergence") {
  const auto blow = models::make_model("blowup", 1, [](const auto& x, double) { return (x.array() * x.array()).matrix().eval(); });
  CHECK_THROWS_AS(ode::rk4_fixed(*blow, Vector::Constant(1, 10.0), {0.0, 10.0}, 0.01), DivergenceError);
}

TEST_CASE("rk45 on the rotation field") {
  const auto rot = models::make_model("rotation", 2, [](const auto& x, double) {
    auto f = x.eval();
    f(0) = x(1);
    f(1) = -x(0);
    return f;
  });
  const auto tr = ode::rk45_adaptive(*rot, Eigen::Vector2d(1.0, 0.0), {0.0, 2.0 * std::numbers::pi}, 1e-9, 1e-9);
  CHECK(std::abs(tr.back()(0) - 1.0) < 1e-7);
  CHECK(std::abs(tr.back()(1)) < 1e-7);
}

TEST_CASE("rk45 accuracy and determinism") {
  const auto m = decay_model();
  ode::AdaptiveStats stats;
  const auto a = ode::rk45_adaptive(*m, Vector::Ones(1), {0.0, 1.0}, 1e-10, 1e-10, &stats);
  CHECK(std::abs(a.back()(0) - std::exp(-1.0)) < 1e-8);
  CHECK(a.times(0) == 0.0);
  CHECK(a.times(a.size() - 1) == 1.0);
  CHECK(stats.max_accepted_error <= 1.0);
  const auto b = ode::rk45_adaptive(*m, Vector::Ones(1), {0.0, 1.0}, 1e-10, 1e-10);
  CHECK(a.times == b.times);
  CHECK(a.states == b.states);
}

TEST_CASE("rk45 flags stiffness") {
  const auto stiff = decay_model(1, 1e17);
  CHECK_THROWS_AS(ode::rk45_adaptive(*stiff, Vector::Ones(1), {0.0, 1.0}, 1e-10, 1e-10), StiffnessError);
}

TEST_CASE("implicit trapezoidal") {
  SUBCASE("A-stable on a stiff scalar") {
    const auto stiff = decay_model(1, 1e4);
    const auto tr = ode::implicit_trapezoidal(*stiff, Vector::Ones(1), {0.0, 0.1}, 1e-3);
    for (Index k = 1; k < tr.size(); ++k) {
      CHECK(std::abs(tr.states(0, k)) <= std::abs(tr.states(0, k - 1)));
    }
    CHECK(tr.states.allFinite());
  }
  SUBCASE("second-order accuracy") {
    const auto m = decay_model();
    const auto tr = ode::implicit_trapezoidal(*m, Vector::Ones(1), {0.0, 1.0}, 0.01);
    CHECK(std::abs(tr.back()(0) - std::exp(-1.0)) < 1e-4);
  }
  SUBCASE("agrees with rk45 on the generator") {
    const models::SgParams p;
    const models::SgModel sg(p);
    Vector x0 = models::sg_equilibrium(p, models::sg_default_guess(p)).to_vector();
    x0 = (x0.array() * Eigen::Array4d(1.05, 0.95, 1.03, 0.98)).matrix();
    const auto ref = ode::rk45_adaptive(sg, x0, {0.0, 0.5}, 1e-10, 1e-10);
    const auto trap = ode::implicit_trapezoidal(sg, x0, {0.0, 0.5}, 2e-6);
    const Vector diff = (trap.back() - ref.back()).cwiseAbs().cwiseQuotient(ref.back().cwiseAbs());
    CHECK(diff.maxCoeff() < 1e-5);
  }
}

TEST_CASE("stiffness ratio") {
  const auto m = testing::diagonal_model(Eigen::Vector2d(-1.0, -100.0));
  CHECK(ode::stiffness_ratio(*m, Eigen::Vector2d(0.1, 0.2)) == doctest::Approx(100.0).epsilon(0.01));
  const auto zero = decay_model(2, 0.0);
  CHECK_THROWS(ode::stiffness_ratio(*zero, Eigen::Vector2d(1.0, 1.0)));

  const models::SgParams sp;
  const models::SgModel sg(sp);
  const double sg_ratio = ode::stiffness_ratio(sg, models::sg_equilibrium(sp, models::sg_default_guess(sp)).to_vector());
  CHECK(std::isfinite(sg_ratio));
  const models::InverterModel inv{models::InverterParams{}};
  CHECK(ode::stiffness_ratio(inv, inv.nominal_steady_state()) > sg_ratio);
}

TEST_CASE("dense output") {
  const auto m = decay_model();
  const auto tr = ode::rk4_fixed(*m, Vector::Ones(1), {0.0, 1.0}, 1e-3);
  SUBCASE("knots are returned exactly") {
    const Vector q = tr.times.segment(10, 5);
    const Matrix s = ode::sample_at(tr, *m, q);
    CHECK(s == tr.states.middleCols(10, 5));
  }
  SUBCASE("mid-knot error") {
    Vector mid(tr.size() - 1);
    for (Index k = 0; k + 1 < tr.size(); ++k) mid(k) = 0.5 * (tr.times(k) + tr.times(k + 1));
    const Matrix s = ode::sample_at(tr, *m, mid);
    CHECK((s.row(0).transpose() - (-mid.array()).exp().matrix()).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("linear trajectories interpolate exactly") {
    const auto ramp = models::make_model("ramp", 1, [](const auto& x, double) {
      auto f = x.eval();
      f(0) = f(0) * 0.0 + 2.0;
      return f;
    });
    const auto lin = ode::rk4_fixed(*ramp, Vector::Zero(1), {0.0, 1.0}, 0.25);
    const Matrix s = ode::sample_at(lin, *ramp, Eigen::Vector3d(0.1, 0.33, 0.9));
    CHECK(s(0, 0) == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(s(0, 1) == doctest::Approx(0.66).epsilon(1e-14));
    CHECK(s(0, 2) == doctest::Approx(1.8).epsilon(1e-14));
  }
  SUBCASE("range checks") {
    CHECK_THROWS_AS(ode::sample_at(tr, *m, Vector::Constant(1, 1.5)), RangeError);
    CHECK_THROWS_AS(ode::sample_at(tr, *m, Vector::Constant(1, -0.1)), RangeError);
  }
}

TEST_CASE("trajectory csv round trip") {
  const models::SgParams p;
  const models::SgModel sg(p);
  const Vector x0 = models::sg_equilibrium(p, models::sg_default_guess(p)).to_vector() * 1.01;
  const auto tr = ode::rk45_adaptive(sg, x0, {0.0, 0.05}, 1e-8, 1e-8);
  const auto path = std::filesystem::temp_directory_path() / "gridpinn_traj.csv";
  ode::write_csv(tr, path);
  const auto back = ode::read_csv(path, "sg");
  CHECK(back.times == tr.times);
  CHECK(back.states == tr.states);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(ode::read_csv("/nonexistent/dir/x.csv"), IoError);
}

TEST_CASE("solver configuration") {
  ode::SolverConfig c;
  c.fixed_step = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(ode::method_from_string("implicit_trapezoidal") == ode::Method::implicit_trapezoidal);
  CHECK(ode::to_string(ode::Method::rk4) == "rk4");
  CHECK_THROWS(ode::method_from_string("euler"));
}
