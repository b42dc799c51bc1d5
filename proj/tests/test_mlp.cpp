#include "c4/mlp.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <array>
#include <cmath>

using namespace c4;

namespace {

MlpCritic linear_critic(const Vector& w, double b) {
  DenseLayer layer{w.transpose(), Vector::Constant(1, b)};
  return MlpCritic({layer});
}

// Random point whose hidden pre-activations all sit at least `margin` from 0.
Vector smooth_point(const MlpCritic& critic, Rng& rng, double margin = 1e-3) {
  for (;;) {
    Vector x = gaussian_matrix(critic.input_dim(), 1, rng);
    if (oracle::min_abs_preactivation(critic, x) > margin) return x;
  }
}

}  // namespace

TEST_CASE("forward: zero weights return the head bias") {
  const std::array<int, 4> arch{3, 5, 4, 1};
  MlpCritic c = MlpCritic::zeros(arch);
  Vector p = c.parameters();
  p(p.size() - 1) = 0.75;
  c.set_parameters(p);
  CHECK(forward(c, Vector::Constant(3, 2.5)) == 0.75);
}

TEST_CASE("forward: single linear layer") {
  Vector w(2);
  w << 1, 1;
  Vector x(2);
  x << 2, 3;
  CHECK(forward(linear_critic(w, 0.0), x) == 5.0);
}

TEST_CASE("forward: matches straight-line recomputation") {
  Rng rng(11);
  const std::array<int, 4> arch{4, 7, 6, 1};
  for (int trial = 0; trial < 20; ++trial) {
    MlpCritic c = MlpCritic::random(arch, rng);
    Vector x = gaussian_matrix(4, 1, rng);
    std::vector<double> xs(x.data(), x.data() + x.size());
    CHECK(forward(c, x) == doctest::Approx(oracle::mlp_value(c, xs)).epsilon(1e-13));
  }
}

TEST_CASE("forward: dimension mismatch is an input error") {
  Rng rng(1);
  const std::array<int, 3> arch{4, 3, 1};
  MlpCritic c = MlpCritic::random(arch, rng);
  CHECK_THROWS_AS(forward(c, Vector::Zero(3)), InputError);
}

TEST_CASE("input_gradient: linear critic returns its weights") {
  Vector w(3);
  w << 0.5, -2.0, 1.25;
  CHECK(input_gradient(linear_critic(w, 0.3), Vector::Constant(3, 7.0)) == w);
}

TEST_CASE("input_gradient: agrees with central differences at 100 smooth points") {
  Rng rng(2024);
  const std::array<int, 4> arch{4, 16, 16, 1};
  MlpCritic c = MlpCritic::random(arch, rng);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vector x = smooth_point(c, rng);
    const Vector fd = oracle::central_difference([&](const Vector& v) { return forward(c, v); }, x, 1e-5);
    worst = std::max(worst, oracle::max_relative_error(input_gradient(c, x), fd));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("input_gradient and features vanish on a dead ReLU region") {
  std::vector<DenseLayer> layers;
  layers.push_back({Matrix::Constant(3, 2, 1.0), Vector::Constant(3, -0.1)});
  layers.push_back({Matrix::Constant(1, 3, 2.0), Vector::Constant(1, 0.4)});
  MlpCritic c(std::move(layers));
  Vector x(2);
  x << -1.0, -2.0;
  for (double scale : {1.0, 3.0, 10.0}) {
    CHECK(input_gradient(c, scale * x) == Vector::Zero(2));
    CHECK(penultimate_features(c, scale * x) == Vector::Zero(3));
    CHECK(forward(c, scale * x) == 0.4);
  }
}

TEST_CASE("penultimate_features") {
  SUBCASE("identity hidden layer passes positive inputs through") {
    std::vector<DenseLayer> layers;
    layers.push_back({Matrix::Identity(3, 3), Vector::Zero(3)});
    layers.push_back({Matrix::Constant(1, 3, 1.0), Vector::Zero(1)});
    MlpCritic c(std::move(layers));
    Vector x(3);
    x << 0.2, 1.5, 3.0;
    CHECK(penultimate_features(c, x) == x);
  }
  SUBCASE("head applied to features reproduces forward") {
    Rng rng(5);
    const std::array<int, 4> arch{4, 8, 5, 1};
    for (int t = 0; t < 10; ++t) {
      MlpCritic c = MlpCritic::random(arch, rng);
      Vector x = gaussian_matrix(4, 1, rng);
      const double recomposed = c.head().weight.row(0).dot(penultimate_features(c, x)) + c.head().bias(0);
      CHECK(forward(c, x) == doctest::Approx(recomposed).epsilon(1e-14));
    }
  }
}

TEST_CASE("param_gradient") {
  SUBCASE("zero TD error gives a zero gradient") {
    Rng rng(3);
    const std::array<int, 3> arch{2, 4, 1};
    MlpCritic c = MlpCritic::random(arch, rng);
    Matrix x = gaussian_matrix(2, 6, rng);
    const RowVector y = forward_batch(c, x);
    auto g = param_gradient(c, x, [&](const BatchOutputs& o) {
      const RowVector d = o.output - y;
      return LossSensitivity{d.squaredNorm() / 6.0, 2.0 * d / 6.0, {}, {}};
    });
    CHECK(g.value == 0.0);
    CHECK(g.gradient.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("one-sample squared loss on a linear critic") {
    Vector w(3);
    w << 0.5, -1.0, 2.0;
    MlpCritic c = linear_critic(w, 0.1);
    Vector x(3);
    x << 1.0, 2.0, -0.5;
    const double y = 4.0;
    const double delta = y - forward(c, x);
    auto g = param_gradient(c, x, [&](const BatchOutputs& o) {
      const double d = y - o.output(0);
      return LossSensitivity{d * d, RowVector::Constant(1, -2.0 * d), {}, {}};
    });
    const Vector expected_w = 2.0 * delta * (-x);
    CHECK((g.gradient.head(3) - expected_w).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(g.gradient(3) == doctest::Approx(-2.0 * delta));
  }
  SUBCASE("random net and batch match finite differences, including feature and input-gradient terms") {
    Rng rng(77);
    const std::array<int, 4> arch{3, 6, 5, 1};
    MlpCritic c = MlpCritic::random(arch, rng);
    Matrix x = gaussian_matrix(3, 8, rng);
    const RowVector y = RowVector::Random(8);
    const Matrix feat_target = gaussian_matrix(5, 8, rng);
    const Matrix grad_target = gaussian_matrix(3, 8, rng);
    // Loss mixing all three channels: squared error, feature coupling, input-gradient coupling.
    auto value_of = [&](const BatchOutputs& o) {
      return (o.output - y).squaredNorm() + 0.3 * (o.features.cwiseProduct(feat_target)).sum() +
             0.2 * o.input_gradients.squaredNorm();
    };
    auto loss = [&](const BatchOutputs& o) {
      return LossSensitivity{value_of(o), 2.0 * (o.output - y), 0.3 * feat_target, 0.4 * o.input_gradients};
    };
    const auto analytic = param_gradient(c, x, loss, true);
    const Vector theta = c.parameters();
    auto f = [&](const Vector& p) {
      MlpCritic cc = c;
      cc.set_parameters(p);
      BatchOutputs o{forward_batch(cc, x), features_batch(cc, x), input_gradients_batch(cc, x)};
      return value_of(o);
    };
    const Vector fd = oracle::central_difference(f, theta, 1e-6);
    CHECK(oracle::max_relative_error(analytic.gradient, fd) < 1e-4);
  }
}

TEST_CASE("param_gradient matches finite differences at 100 random smooth points") {
  Rng rng(99);
  const std::array<int, 4> arch{4, 8, 8, 1};
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    MlpCritic c = MlpCritic::random(arch, rng);
    const Vector x = smooth_point(c, rng);
    const double y = 0.5;
    auto loss = [&](const BatchOutputs& o) {
      const double d = o.output(0) - y;
      return LossSensitivity{d * d, RowVector::Constant(1, 2.0 * d), {}, {}};
    };
    const auto g = param_gradient(c, x, loss);
    auto f = [&](const Vector& p) {
      MlpCritic cc = c;
      cc.set_parameters(p);
      const double d = forward(cc, x) - y;
      return d * d;
    };
    worst = std::max(worst, oracle::max_relative_error(g.gradient, oracle::central_difference(f, c.parameters(), 1e-6)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("forward is positively homogeneous in the head weights with zero biases") {
  Rng rng(8);
  const std::array<int, 4> arch{4, 6, 6, 1};
  MlpCritic c = MlpCritic::random(arch, rng);
  std::vector<DenseLayer> layers = c.layers();
  for (auto& l : layers) l.bias.setZero();
  const Vector x = gaussian_matrix(4, 1, rng);
  const double base = forward(MlpCritic(layers), x);
  for (double s : {0.5, 2.0, 7.0}) {
    auto scaled = layers;
    scaled.back().weight *= s;
    CHECK(forward(MlpCritic(scaled), x) == doctest::Approx(s * base).epsilon(1e-14));
  }
}

TEST_CASE("ema_update") {
  Rng rng(4);
  const std::array<int, 4> arch{4, 5, 3, 1};
  const MlpCritic online = MlpCritic::random(arch, rng);
  const TargetCritic t0{MlpCritic::random(arch, rng), 0.5};

  SUBCASE("rate 1 copies and is idempotent") {
    auto once = ema_update(t0, online, 1.0);
    auto twice = ema_update(once, online, 1.0);
    CHECK(once.network.parameters() == online.parameters());
    CHECK(twice.network.parameters() == once.network.parameters());
  }
  SUBCASE("rate 0.5 twice leaves a quarter of the gap") {
    auto t = ema_update(ema_update(t0, online, 0.5), online, 0.5);
    const Vector expected = online.parameters() + 0.25 * (t0.network.parameters() - online.parameters());
    CHECK((t.network.parameters() - expected).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("rate 0.005 over 1000 steps shrinks the gap geometrically") {
    TargetCritic t = t0;
    for (int i = 0; i < 1000; ++i) t = ema_update(t, online, 0.005);
    const double gap0 = (t0.network.parameters() - online.parameters()).norm();
    const double gap = (t.network.parameters() - online.parameters()).norm();
    CHECK(gap / gap0 == doctest::Approx(std::pow(0.995, 1000)).epsilon(1e-9));
  }
  SUBCASE("errors") {
    const std::array<int, 3> other{4, 2, 1};
    CHECK_THROWS_AS(ema_update(t0, MlpCritic::random(other, rng), 0.1), InputError);
    CHECK_THROWS_AS(ema_update(t0, online, 0.0), InputError);
    CHECK_THROWS_AS(ema_update(t0, online, 1.5), InputError);
  }
}

TEST_CASE("critic JSON round-trips exactly") {
  Rng rng(6);
  const std::array<int, 4> arch{4, 9, 7, 1};
  for (int t = 0; t < 5; ++t) {
    const MlpCritic c = MlpCritic::random(arch, rng);
    const MlpCritic back = critic_from_json(to_json(c));
    CHECK(back.arch() == c.arch());
    CHECK(back.parameters() == c.parameters());
    CHECK(to_json(back) == to_json(c));
  }
  CHECK_THROWS_AS(critic_from_json("{\"arch\":[2,1],\"layers\":[{\"w\":[1],\"b\":[0]}]}"), InputError);
}

TEST_CASE("constructor rejects layers that do not chain") {
  std::vector<DenseLayer> layers;
  layers.push_back({Matrix::Zero(3, 2), Vector::Zero(3)});
  layers.push_back({Matrix::Zero(1, 4), Vector::Zero(1)});
  CHECK_THROWS_AS(MlpCritic(std::move(layers)), InputError);
}

TEST_CASE("Adam reduces a quadratic") {
  Optimizer opt(Optimizer::Kind::adam, 0.05);
  Vector p = Vector::Constant(3, 2.0);
  for (int i = 0; i < 500; ++i) opt.step(p, 2.0 * p);
  CHECK(p.norm() < 0.05);
}
