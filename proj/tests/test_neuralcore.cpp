// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/activation.hpp"
#include "gridpinn/mlp.hpp"
#include "gridpinn/pinnloss.hpp"
#include "gridpinn/rng.hpp"
#include "gridpinn/tape.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace gridpinn;
using namespace gridpinn::nn;

namespace {

MlpConfig small_config(Index in, Index out, int layers, Index width, std::uint64_t seed) {
  MlpConfig c;
  c.input_dim = in;
  c.output_dim = out;
  c.hidden_layers = layers;
  c.hidden_width = width;
  c.seed = seed;
  return c;
}

Matrix random_matrix(Index rows, Index cols, CounterRng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-scale, scale);
  }
  return m;
}

NodeId output_square(Tape& tape, const Mlp& net, const Matrix& input) {
  return tape.sum_squares(net.record(tape, tape.input(input)), 1.0);
}

}  // namespace

TEST_CASE("glorot initialization") {
  CounterRng rng(7, 1);
  const Matrix w = glorot_init(5, 64, rng);
  const double limit = 0.29488391230979427;
  CHECK(std::sqrt(6.0 / 69.0) == doctest::Approx(limit).epsilon(1e-15));
  CHECK(w.rows() == 64);
  CHECK(w.cols() == 5);
  CHECK(w.cwiseAbs().maxCoeff() <= limit);

  CounterRng again(7, 1);
  CHECK(glorot_init(5, 64, again) == w);

  CounterRng big(11, 2);
  const Matrix many = glorot_init(1000, 100, big);
  const double sigma_mean = std::sqrt(6.0 / 1100.0) / std::sqrt(3.0) / std::sqrt(1e5);
  CHECK(std::abs(many.mean()) < 3.0 * sigma_mean);
}

TEST_CASE("mlp construction") {
  const Mlp net(small_config(3, 2, 2, 8, 1));
  CHECK(net.n_params() == (8 * 3 + 8) + (8 * 8 + 8) + (2 * 8 + 2));
  for (int l = 0; l < net.n_layers(); ++l) CHECK(net.bias(l).isZero(0.0));
  CHECK_THROWS_AS(Mlp(small_config(0, 2, 1, 4, 0)), ContractError);
  CHECK_THROWS_AS(Mlp(small_config(3, 2, 1, 4, 0), Vector::Zero(5)), ShapeError);
}

TEST_CASE("forward pass") {
  SUBCASE("zero parameters give zero output") {
    Mlp net(small_config(3, 2, 2, 8, 1));
    net.set_params(Vector::Zero(net.n_params()));
    CHECK(net.forward(Matrix::Ones(3, 4)).isZero(0.0));
  }
  SUBCASE("identity layers compose tanh") {
    Mlp net(small_config(2, 2, 2, 2, 0));
    net.set_params(Vector::Zero(net.n_params()));
    for (int l = 0; l < 3; ++l) net.weight(l) = Matrix::Identity(2, 2);
    net.bias(0) = Eigen::Vector2d(0.1, -0.2);
    const Matrix out = net.forward(Eigen::Vector2d(0.5, 1.5));
    CHECK(out(0, 0) == doctest::Approx(std::tanh(std::tanh(0.6))).epsilon(1e-15));
    CHECK(out(1, 0) == doctest::Approx(std::tanh(std::tanh(1.3))).epsilon(1e-15));
  }
  SUBCASE("large inputs stay finite") {
    const Mlp net(small_config(3, 2, 3, 16, 4));
    CHECK(net.forward(Matrix::Constant(3, 2, 1e3)).allFinite());
  }
  SUBCASE("shape mismatch") {
    const Mlp net(small_config(3, 2, 1, 4, 0));
    CHECK_THROWS_AS(net.forward(Matrix::Ones(2, 1)), ShapeError);
  }
}

TEST_CASE("tanh evaluation matches the standard library") {
  Vector x = Vector::LinSpaced(2001, -25.0, 25.0);
  Matrix m = x;
  const Matrix y = tanh_matrix(m);
  const Matrix reflected = tanh_matrix(-m);
  double worst_abs = 0.0;
  double worst_rel = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double ref = std::tanh(x(i));
    worst_abs = std::max(worst_abs, std::abs(y(i) - ref));
    if (ref != 0.0) worst_rel = std::max(worst_rel, std::abs(y(i) - ref) / std::abs(ref));
    CHECK(y(i) == -reflected(i));
  }
  CHECK(worst_abs < 4e-16);
  CHECK(worst_rel < 1e-14);
  const Matrix tiny = tanh_matrix(Matrix::Constant(1, 1, 1e-300));
  CHECK(tiny(0, 0) == 1e-300);
}

TEST_CASE("time-derivative channel") {
  CounterRng rng(3, 99);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Mlp net(small_config(3, 2, 3, 16, static_cast<std::uint64_t>(trial)));
    Matrix in = random_matrix(3, 5, rng);
    const TimeGrad tg = forward_with_time_grad(net, in, 2);
    const double h = 1e-5;
    Matrix plus = in, minus = in, plus2 = in, minus2 = in;
    plus.row(2).array() += h;
    minus.row(2).array() -= h;
    plus2.row(2).array() += 2 * h;
    minus2.row(2).array() -= 2 * h;
    const Matrix fd = (8.0 * (net.forward(plus) - net.forward(minus)) -
                       (net.forward(plus2) - net.forward(minus2))) / (12.0 * h);
    const Matrix denom = tg.rate.cwiseAbs().cwiseMax(fd.cwiseAbs()).cwiseMax(1e-8);
    worst = std::max(worst, ((tg.rate - fd).cwiseAbs().array() / denom.array()).maxCoeff());
    CHECK(tg.value == net.forward(in));
  }
  CHECK(worst < 1e-6);

  SUBCASE("output linear in t") {
    Mlp lin(small_config(2, 1, 0, 1, 0));
    lin.set_params(Eigen::Vector3d(0.0, 2.5, 0.1));
    const TimeGrad tg = forward_with_time_grad(lin, Matrix::Random(2, 4), 1);
    CHECK((tg.rate.array() == 2.5).all());
  }
  SUBCASE("outputs independent of t have zero rate") {
    Mlp net(small_config(2, 2, 2, 6, 5));
    net.weight(0).col(1).setZero();
    const TimeGrad tg = forward_with_time_grad(net, Matrix::Random(2, 3), 1);
    CHECK(tg.rate.isZero(0.0));
  }
  SUBCASE("tangent is linear in the seed") {
    const Mlp net(small_config(3, 2, 2, 8, 9));
    const Matrix in = random_matrix(3, 4, rng);
    Matrix seed = Matrix::Zero(3, 4);
    seed.row(2).setOnes();
    Tape a(net.n_params()), b(net.n_params());
    const NodeId ya = net.record(a, a.input(in, seed));
    const NodeId yb = net.record(b, b.input(in, 2.0 * seed));
    CHECK((b.tangent(yb) - 2.0 * a.tangent(ya)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("reverse sweep") {
  const Mlp net(small_config(3, 2, 2, 8, 12));
  CounterRng rng(5, 5);
  const Matrix in = random_matrix(3, 6, rng);

  SUBCASE("ic-style loss matches finite differences") {
    const Matrix target = random_matrix(2, 6, rng);
    const LossBuilder build = [&](Tape& t, const Mlp& n) {
      return t.sum_squares(t.sub(n.record(t, t.input(in)), t.input(target)), 6.0);
    };
    CHECK(gradient_check(net, build, 1e-4) < 1e-6);
  }
  SUBCASE("loss through the time channel matches finite differences") {
    Matrix seed = Matrix::Zero(3, 6);
    seed.row(2).setOnes();
    const LossBuilder build = [&](Tape& t, const Mlp& n) {
      const NodeId y = n.record(t, t.input(in, seed));
      return t.sum_squares(t.add(t.time_rate(y), y), 6.0);
    };
    CHECK(gradient_check(net, build, 1e-4) < 1e-6);
  }
  SUBCASE("constant loss has zero gradient") {
    const auto [v, g] = value_and_gradient(net, [&](Tape& t, const Mlp&) {
      return t.sum_squares(t.input(Matrix::Ones(1, 1)), 1.0);
    });
    CHECK(v == 1.0);
    CHECK(g.isZero(0.0));
  }
  SUBCASE("non-scalar root is rejected") {
    Tape t(net.n_params());
    const NodeId y = net.record(t, t.input(in));
    CHECK_THROWS_AS(t.backward(y), ContractError);
  }
  SUBCASE("directional derivative") {
    CounterRng vr(8, 8);
    const Vector v = random_matrix(net.n_params(), 1, vr);
    const LossBuilder build = [&](Tape& t, const Mlp& n) { return output_square(t, n, in); };
    const auto [f0, g] = value_and_gradient(net, build);
    auto at = [&](double s) {
      Mlp probe(net.config(), net.params() + s * v);
      Tape t(probe.n_params());
      return t.scalar(build(t, probe));
    };
    const double h = 1e-3;
    const double fd = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
    CHECK(std::abs(g.dot(v) - fd) / std::abs(fd) < 1e-9);
  }
}

TEST_CASE("gradient check utility") {
  const Mlp lin(small_config(2, 2, 0, 1, 3));
  const Matrix in = Matrix::Constant(2, 3, 0.7);
  const LossBuilder build = [&](Tape& t, const Mlp& n) { return output_square(t, n, in); };
  CHECK(gradient_check(lin, build, 1e-3) < 1e-8);

  Vector corrupted = value_and_gradient(lin, build).second;
  Index k = 0;
  corrupted.cwiseAbs().maxCoeff(&k);
  corrupted(k) *= 2.0;
  CHECK(gradient_check(lin, build, 1e-3, &corrupted) >= 0.5);
}

TEST_CASE("full physics loss gradient on a two-state toy model") {
  const auto model = testing::toy2_model();
  pinn::Normalizer norm{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1.0, 1.0),
                        Eigen::Vector2d(1.5, 2.0), 2.0};
  const pinn::StateNet sn{Mlp(pinn::state_net_config(norm, 4, 16, 21, streams::kMainNet)), norm};
  const Matrix ics = (Matrix(2, 3) << 0.5, -0.3, 1.0, 0.1, 0.4, -0.6).finished();
  CounterRng rng(21, streams::kCollocation);
  const auto coll = pinn::sample_collocation(7, 2.0, rng);
  const LossBuilder build = testing::state_loss(norm, [&](Tape& t, const pinn::StateNet& probe) {
    return pinn::total_loss(t, {0.7, 1.3, 0.0}, probe, *model, coll, ics).root;
  });
  CHECK(gradient_check(sn.net, build, 1e-4, nullptr, 1e-8) < 1e-5);
}

TEST_CASE("parameters round trip") {
  const Mlp net(small_config(5, 4, 4, 64, 77));
  const Mlp back = mlp_from_json(nlohmann::json::parse(to_json(net).dump()));
  CHECK(back.params() == net.params());
  CHECK(back.config().hidden_width == 64);
  nlohmann::json bad = to_json(net);
  bad["activation"] = "relu";
  CHECK_THROWS_AS(mlp_from_json(bad), ConfigError);
}

TEST_CASE("initialization and sweeps are deterministic") {
  const Mlp a(small_config(5, 4, 3, 32, 42));
  const Mlp b(small_config(5, 4, 3, 32, 42));
  CHECK(a.params() == b.params());
  const Matrix in = Matrix::Constant(5, 9, 0.3);
  const LossBuilder build = [&](Tape& t, const Mlp& n) { return output_square(t, n, in); };
  const auto ga = value_and_gradient(a, build);
  const auto gb = value_and_gradient(b, build);
  CHECK(ga.first == gb.first);
  CHECK(ga.second == gb.second);
}
