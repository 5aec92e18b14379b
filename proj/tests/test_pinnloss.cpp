// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/pinnloss.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace gridpinn;
using namespace gridpinn::pinn;

namespace {

Normalizer unit_normalizer(Index dim, double t_end) {
  return {Vector::Zero(dim), Vector::Ones(dim), Vector::Ones(dim), t_end};
}

/// y = W [features; tau] + b with no hidden layer.
StateNet linear_net(const Normalizer& norm, const Matrix& w, const Vector& b) {
  nn::Mlp net(state_net_config(norm, 0, 1, 0, 0));
  net.weight(0) = w;
  net.bias(0) = b;
  return {net, norm};
}

StateNet random_net(const Normalizer& norm, std::uint64_t seed) {
  return {nn::Mlp(state_net_config(norm, 2, 12, seed, streams::kMainNet)), norm};
}

Matrix toy_ics() {
  return (Matrix(2, 4) << 0.5, -0.3, 1.0, 0.2, 0.1, 0.4, -0.6, -0.9).finished();
}

}  // namespace

TEST_CASE("collocation sampling") {
  CounterRng a(5, streams::kCollocation);
  const CollocationSet c = sample_collocation(20000, 0.5, a);
  CHECK(c.size() == 20000);
  CHECK(c.t_end == 0.5);
  CHECK(c.times.minCoeff() >= 0.0);
  CHECK(c.times.maxCoeff() < 0.5);
  const double sigma_mean = 0.5 / std::sqrt(12.0) / std::sqrt(20000.0);
  CHECK(std::abs(c.times.mean() - 0.25) < 3.0 * sigma_mean);

  CounterRng b(5, streams::kCollocation);
  CHECK(sample_collocation(20000, 0.5, b).times == c.times);
  CounterRng other(6, streams::kCollocation);
  CHECK(sample_collocation(10, 0.5, other).times != c.times.head(10));
  CHECK_THROWS_AS(sample_collocation(0, 0.5, b), ContractError);
  CHECK_THROWS_AS(sample_collocation(5, 0.0, b), ContractError);
}

TEST_CASE("normalizer") {
  const Normalizer n{Eigen::Vector2d(1.0, -2.0), Eigen::Vector2d(0.5, 4.0),
                     Eigen::Vector2d(2.0, 8.0), 0.5};
  n.validate();
  const Matrix x = toy_ics();
  CHECK((n.decode(n.encode(x)) - x).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(n.features(Eigen::Vector2d(2.0, 2.0)).isApprox(Eigen::Vector2d(2.0, 1.0)));
  const Normalizer back = normalizer_from_json(nlohmann::json::parse(to_json(n).dump()));
  CHECK(back.center == n.center);
  CHECK(back.output_scale == n.output_scale);
  CHECK(back.t_end == n.t_end);

  Normalizer bad = n;
  bad.output_scale(1) = 0.0;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = n;
  bad.input_scale.resize(3);
  CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("state net prediction") {
  const Normalizer norm{Eigen::Vector2d(0.3, -0.1), Eigen::Vector2d(1.0, 2.0),
                        Eigen::Vector2d(1.5, 0.5), 0.4};
  const StateNet sn = random_net(norm, 3);
  const Vector x0 = Eigen::Vector2d(0.2, 0.7);
  const Vector times = Vector::LinSpaced(9, 0.0, 0.4);
  const auto [value, rate] = sn.predict_with_rate(x0, times);
  CHECK(value == sn.predict(x0, times));

  const double h = 1e-5;
  const Matrix fd = (sn.predict(x0, times.array() + h) - sn.predict(x0, times.array() - h)) / (2 * h);
  CHECK((fd - rate).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("initial-condition loss") {
  const Normalizer norm = unit_normalizer(4, 1.0);
  const StateNet zero = linear_net(norm, Matrix::Zero(4, 5), Vector::Zero(4));
  const Vector x0 = (Vector(4) << 3.0, 4.0, 0.0, 0.0).finished();
  CHECK(ic_loss(zero, x0) == 25.0);

  const Matrix ics = toy_ics();
  const StateNet sn = random_net(unit_normalizer(2, 1.0), 9);
  Matrix shuffled(2, 4);
  shuffled << ics.col(2), ics.col(0), ics.col(3), ics.col(1);
  CHECK(ic_loss(sn, shuffled) == doctest::Approx(ic_loss(sn, ics)).epsilon(1e-14));

  // Copying the IC features to the output satisfies the condition exactly.
  Matrix copy = Matrix::Zero(2, 3);
  copy.leftCols(2).setIdentity();
  CHECK(ic_loss(linear_net(unit_normalizer(2, 1.0), copy, Vector::Zero(2)), ics) == 0.0);
  CHECK_THROWS_AS(ic_loss(sn, Matrix(2, 0)), ContractError);
}

TEST_CASE("physics residual loss") {
  SUBCASE("zero network on a frozen model") {
    const auto frozen = testing::decay_model(3, 0.0);
    const Normalizer norm = unit_normalizer(3, 0.7);
    const StateNet zero = linear_net(norm, Matrix::Zero(3, 4), Vector::Zero(3));
    CounterRng rng(1, 1);
    CHECK(ode_residual_loss(zero, *frozen, sample_collocation(17, 0.7, rng), Matrix::Ones(3, 5)) == 0.0);
  }
  SUBCASE("closed form for a linear network on decay") {
    // y = x0 + c tau, so dy/dtau = c and the residual is c + t_end (x0 + c tau).
    const double t_end = 2.0;
    const double c = -0.75;
    const auto decay = testing::decay_model(1, 1.0);
    const Normalizer norm = unit_normalizer(1, t_end);
    const StateNet sn = linear_net(norm, (Matrix(1, 2) << 1.0, c).finished(), Vector::Zero(1));
    const Vector ics = (Vector(3) << 0.5, -1.0, 2.0).finished();
    const CollocationSet coll{(Vector(4) << 0.0, 0.3, 1.1, 1.9).finished(), t_end};
    double expected = 0.0;
    for (double x0 : ics) {
      for (double t : coll.times) {
        const double r = c + t_end * (x0 + c * t / t_end);
        expected += r * r;
      }
    }
    expected /= 12.0;
    CHECK(ode_residual_loss(sn, *decay, coll, ics.transpose()) ==
          doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("exact solution has a small residual only through the activation") {
    const auto toy = testing::toy2_model();
    const StateNet sn = random_net(unit_normalizer(2, 1.0), 4);
    CounterRng rng(2, 2);
    const CollocationSet coll = sample_collocation(30, 1.0, rng);
    const Matrix ics = toy_ics();
    Matrix shuffled(2, 4);
    shuffled << ics.col(3), ics.col(1), ics.col(0), ics.col(2);
    CHECK(ode_residual_loss(sn, *toy, coll, shuffled) ==
          doctest::Approx(ode_residual_loss(sn, *toy, coll, ics)).epsilon(1e-13));
  }
  SUBCASE("model rejection names the column") {
    models::SgParams p;
    const auto sg = std::make_shared<models::SgModel>(p);
    const Normalizer norm = unit_normalizer(4, 0.5);
    const StateNet sn = linear_net(norm, Matrix::Zero(4, 5), Vector::Constant(4, NAN));
    CollocationSet coll{Vector::Constant(2, 0.1), 0.5};
    CHECK_THROWS_AS(ode_residual_loss(sn, *sg, coll, Matrix::Zero(4, 1)), DomainError);
  }
}

TEST_CASE("supervised loss") {
  const auto frozen = testing::decay_model(3, 0.0);
  const Normalizer norm = unit_normalizer(3, 1.0);
  const Matrix ics = (Matrix(3, 2) << 1.0, 0.5, -2.0, 0.25, 0.0, 3.0).finished();
  SupervisedData truth;
  truth.ics = ics;
  truth.times = Vector::LinSpaced(5, 0.0, 1.0);
  for (Index k = 0; k < ics.cols(); ++k) truth.states.push_back(ics.col(k).replicate(1, 5));

  auto offset_net = [&](double eps) {
    Matrix w = Matrix::Zero(3, 4);
    w.leftCols(3).setIdentity();
    return linear_net(norm, w, Vector::Constant(3, eps));
  };
  const double eps = 0.01;
  CHECK(supervised_loss(offset_net(eps), truth) == doctest::Approx(eps * eps * 3).epsilon(1e-12));
  CHECK(supervised_loss(offset_net(2 * eps), truth) ==
        doctest::Approx(4.0 * supervised_loss(offset_net(eps), truth)).epsilon(1e-12));
  CHECK(supervised_loss(offset_net(0.0), truth) == 0.0);

  SupervisedData outside = truth;
  outside.times(4) = 1.5;
  CHECK_THROWS_AS(supervised_loss(offset_net(eps), outside), RangeError);
  SupervisedData misaligned = truth;
  misaligned.states[0] = Matrix::Zero(3, 4);
  CHECK_THROWS_AS(supervised_loss(offset_net(eps), misaligned), RangeError);
}

TEST_CASE("align truth to a grid") {
  const auto decay = testing::decay_model(1, 1.0);
  const auto tr = ode::rk45_adaptive(*decay, Vector::Ones(1), {0.0, 1.0}, 1e-10, 1e-10);
  const SupervisedData d = align_truth({tr}, *decay, Vector::LinSpaced(3, 0.0, 1.0));
  CHECK(d.states[0](0, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-7));
  CHECK(d.ics(0, 0) == 1.0);
  CHECK_THROWS_AS(align_truth({tr}, *decay, Vector::LinSpaced(3, 0.0, 2.0)), RangeError);
}

TEST_CASE("weighted total") {
  TermGradients t;
  t.values.l_ic = 0.5;
  t.values.l_ode = 0.1;
  t.g_ic = Eigen::Vector2d(1.0, 0.0);
  t.g_ode = Eigen::Vector2d(0.0, 1.0);
  CHECK(t.weighted({2.0, 3.0, 0.0}) == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(t.combine({2.0, 3.0, 0.0}) == Eigen::Vector2d(2.0, 3.0));

  const auto toy = testing::toy2_model();
  const StateNet sn = random_net(unit_normalizer(2, 1.0), 6);
  CounterRng rng(4, 4);
  const CollocationSet coll = sample_collocation(15, 1.0, rng);
  const Matrix ics = toy_ics();
  auto total = [&](LossWeights w) {
    nn::Tape tape(sn.net.n_params());
    const RecordedLoss r = total_loss(tape, w, sn, *toy, coll, ics);
    CHECK(r.breakdown.total == tape.scalar(r.root));
    return r.breakdown;
  };
  const LossBreakdown only_ic = total({1.0, 0.0, 0.0});
  CHECK(only_ic.total == only_ic.l_ic);
  const LossBreakdown one = total({0.4, 1.0, 0.0});
  const LossBreakdown two = total({0.4, 2.0, 0.0});
  CHECK(two.total - one.total == doctest::Approx(one.l_ode).epsilon(1e-12));
  CHECK(one.l_ode == ode_residual_loss(sn, *toy, coll, ics));
  CHECK_THROWS_AS(total({-1.0, 1.0, 0.0}), ContractError);
  CHECK_THROWS_AS(total({0.0, 0.0, 0.0}), ContractError);
}

TEST_CASE("chunked objective") {
  const auto toy = testing::toy2_model();
  const Normalizer norm{Eigen::Vector2d(0.1, 0.0), Eigen::Vector2d(1.0, 1.0),
                        Eigen::Vector2d(1.2, 0.8), 1.5};
  const StateNet sn = random_net(norm, 8);
  CounterRng rng(7, streams::kCollocation);
  const CollocationSet coll = sample_collocation(37, 1.5, rng);
  const Matrix ics = toy_ics();

  const nn::LossBuilder whole = testing::state_loss(norm, [&](nn::Tape& t, const StateNet& s) {
    return record_ode_loss(t, s, *toy, coll, ics);
  });
  const auto [v_ref, g_ref] = nn::value_and_gradient(sn.net, whole);

  ObjectiveOptions opts;
  opts.columns_per_chunk = 10;
  const PinnObjective obj(toy, ics, coll, opts);
  const auto [v, g] = obj.ode_term(sn, true);
  CHECK(v == doctest::Approx(v_ref).epsilon(1e-13));
  CHECK((g - g_ref).cwiseAbs().maxCoeff() < 1e-12 * g_ref.cwiseAbs().maxCoeff());
  CHECK(obj.ode_term(sn, false).second.size() == 0);

  opts.threads = 3;
  const PinnObjective threaded(toy, ics, coll, opts);
  const TermGradients a = obj.gradients(sn);
  const TermGradients b = threaded.gradients(sn);
  CHECK(a.values.l_ode == b.values.l_ode);
  CHECK(a.g_ode == b.g_ode);
  CHECK(a.values.l_ic == ic_loss(sn, ics));
  CHECK(obj.values(sn).l_ode == a.values.l_ode);

  opts.threads = 1;
  opts.reduction = Reduction::max_square;
  const PinnObjective worst(toy, ics, coll, opts);
  CHECK(worst.ode_term(sn, false).first > 0.0);
  CHECK(reduction_from_string(to_string(Reduction::max_square)) == Reduction::max_square);
  CHECK_THROWS_AS(reduction_from_string("median"), ConfigError);

  CHECK_THROWS_AS(PinnObjective(toy, Matrix(3, 2), coll), ShapeError);
  CHECK_THROWS_AS(PinnObjective(toy, ics, CollocationSet{Vector(0), 1.0}), ContractError);
}
