#include "c4/diagnostics.hpp"
#include "c4/td_train.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <numbers>

using namespace c4;

namespace {

TransitionBatch random_batch(int n, int dim, Rng& rng, double done_rate = 0.2) {
  TransitionBatch b;
  b.x = gaussian_matrix(dim, n, rng);
  b.x_next = gaussian_matrix(dim, n, rng);
  b.reward = gaussian_matrix(n, 1, rng);
  std::bernoulli_distribution term(done_rate);
  b.done = Vector::NullaryExpr(n, [&](Eigen::Index) { return term(rng) ? 1.0 : 0.0; });
  return b;
}

MlpCritic linear_critic(int dim, Rng& rng) {
  return MlpCritic({DenseLayer{gaussian_matrix(1, dim, rng), gaussian_matrix(1, 1, rng)}});
}

double var_s(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

double cov_s(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

}  // namespace

TEST_CASE("estimate_abc: zero gradients give zero terms") {
  Rng rng(1);
  const auto batch = random_batch(16, 4, rng);
  const MlpCritic zero = MlpCritic::zeros(std::vector<int>{4, 8, 1});
  PerturbSpec spec{0.1, 0.2, 500};
  const auto est = estimate_abc(zero, {zero, 0.005}, batch, spec, 0.9, rng);
  CHECK(est.a == 0.0);
  CHECK(est.b == 0.0);
  CHECK(est.c == 0.0);
  CHECK(est.composed == 0.0);
  CHECK(direct_var_delta(zero, {zero, 0.005}, batch, spec, 0.9, rng) == 0.0);
}

TEST_CASE("estimate_abc: direct summation over an explicit direction grid") {
  Rng rng(2);
  const int n = 5, dirs = 12;
  auto batch = random_batch(n, 2, rng, 0.0);
  batch.done(3) = 1.0;
  const MlpCritic online = linear_critic(2, rng);
  const TargetCritic target{linear_critic(2, rng), 0.005};
  PerturbSpec spec{0.3, 0.7, n * dirs};
  spec.scale = Vector::Constant(2, 1.5);

  PerturbDraws draws;
  draws.w_online.resize(2, n * dirs);
  draws.w_target.resize(2, n * dirs);
  std::vector<double> a, b;
  const Vector th = online.head().weight.transpose(), thp = target.network.head().weight.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dirs; ++j) {
      const double ang = 2.0 * std::numbers::pi * j / dirs;
      const double c = std::cos(ang), s = std::sin(ang);
      const double ct = std::cos(ang + 0.4), st = std::sin(ang + 0.4);
      draws.sample.push_back(i);
      draws.w_online.col(i * dirs + j) << c, s;
      draws.w_target.col(i * dirs + j) << ct, st;
      b.push_back(1.5 * (c * th(0) + s * th(1)));
      a.push_back((1.0 - batch.done(i)) * 1.5 * (ct * thp(0) + st * thp(1)));
    }
  const auto est = estimate_abc(online, target, batch, spec, 0.95, draws);
  CHECK(est.a == doctest::Approx(var_s(a)).epsilon(1e-12));
  CHECK(est.b == doctest::Approx(var_s(b)).epsilon(1e-12));
  CHECK(est.c == doctest::Approx(cov_s(a, b)).epsilon(1e-12));
  const double composed = 0.95 * 0.95 * 0.49 * var_s(a) + 0.09 * var_s(b) - 2.0 * 0.95 * 0.21 * cov_s(a, b);
  CHECK(est.composed == doctest::Approx(composed).epsilon(1e-12));

  // A symmetric grid averages w w^T to I/2, so the within-sample part of B is
  // |s o theta|^2 / 2 up to the sample-convention factor.
  const double r = n * dirs;
  CHECK(est.b == doctest::Approx(2.25 * th.squaredNorm() / 2.0 * r / (r - 1.0)).epsilon(1e-12));
}

TEST_CASE("estimate_abc: gamma = 0 leaves k^2 B") {
  Rng rng(3);
  const auto batch = random_batch(20, 4, rng);
  const MlpCritic online = MlpCritic::random(std::vector<int>{4, 8, 1}, rng);
  const TargetCritic target{MlpCritic::random(std::vector<int>{4, 8, 1}, rng), 0.005};
  const PerturbSpec spec{0.2, 0.5, 1000};
  const auto est = estimate_abc(online, target, batch, spec, 0.0, rng);
  CHECK(est.composed == doctest::Approx(0.04 * est.b).epsilon(1e-14));
}

TEST_CASE("direct_var_delta against the composition") {
  Rng rng(4);
  SUBCASE("linear critics agree to 1e-10, tied or not") {
    for (bool tied : {true, false}) {
      const auto batch = random_batch(32, 4, rng);
      const MlpCritic online = linear_critic(4, rng);
      const TargetCritic target{linear_critic(4, rng), 0.005};
      PerturbSpec spec = default_perturb_spec(batch, 2000);
      spec.k = 0.3;
      spec.k_prime = 0.8;
      spec.tied = tied;
      const auto draws = draw_perturbations(batch.size(), 4, spec, rng);
      const double direct = direct_var_delta(online, target, batch, spec, 0.9, draws);
      const double composed = estimate_abc(online, target, batch, spec, 0.9, draws).composed;
      CHECK(std::abs(direct - composed) <= 1e-10 * std::max(1.0, direct));
    }
  }
  SUBCASE("k = k' = 0 gives 0") {
    const auto batch = random_batch(8, 4, rng);
    const MlpCritic online = MlpCritic::random(std::vector<int>{4, 8, 1}, rng);
    CHECK(direct_var_delta(online, {online, 0.005}, batch, {0.0, 0.0, 100}, 0.9, rng) == 0.0);
  }
  SUBCASE("invariant to a constant reward shift") {
    auto batch = random_batch(16, 4, rng);
    const MlpCritic online = MlpCritic::random(std::vector<int>{4, 8, 1}, rng);
    const TargetCritic target{MlpCritic::random(std::vector<int>{4, 8, 1}, rng), 0.005};
    const PerturbSpec spec{0.1, 0.1, 500};
    const auto draws = draw_perturbations(batch.size(), 4, spec, rng);
    const double before = direct_var_delta(online, target, batch, spec, 0.9, draws);
    batch.reward.array() += 7.5;
    CHECK(direct_var_delta(online, target, batch, spec, 0.9, draws) == before);
  }
  SUBCASE("2x16 ReLU critic at the default displacement") {
    const auto batch = random_batch(64, 4, rng);
    const MlpCritic online = MlpCritic::random(std::vector<int>{4, 16, 16, 1}, rng);
    const TargetCritic target{MlpCritic::random(std::vector<int>{4, 16, 16, 1}, rng), 0.005};
    const PerturbSpec spec = default_perturb_spec(batch, 10000);
    const auto draws = draw_perturbations(batch.size(), 4, spec, rng);
    const double direct = direct_var_delta(online, target, batch, spec, 0.99, draws);
    const double composed = estimate_abc(online, target, batch, spec, 0.99, draws).composed;
    CHECK(direct > 0.0);
    CHECK(std::abs(direct - composed) / direct < 0.05);
  }
  CHECK_THROWS_AS(draw_perturbations(4, 4, {-1.0, 0.0, 10}, rng), InputError);
  CHECK_THROWS_AS(draw_perturbations(4, 4, {1.0, 0.0, 1}, rng), InputError);
}

TEST_CASE("quadratic_form_variance") {
  Rng rng(5);
  const int m = 3;
  const Vector g = gaussian_matrix(m, 1, rng), gp = gaussian_matrix(m, 1, rng);
  const Matrix s1 = random_psd(m, m, rng), s2 = random_psd(m, m, rng);
  CHECK(quadratic_form_variance(s1, s2, Matrix::Zero(m, m), g, gp, 0.0) ==
        doctest::Approx(g.dot(s1 * g)).epsilon(1e-15));

  const double k = 0.4, gamma = 0.9;
  const Matrix iso = k * k / m * Matrix::Identity(m, m);
  CHECK(quadratic_form_variance(iso, iso, iso, g, gp, gamma) ==
        doctest::Approx(k * k / m * (gamma * gp - g).squaredNorm()).epsilon(1e-13));

  SUBCASE("Monte Carlo over the implied Gaussian displacement law") {
    const Matrix omega = random_psd(2 * m, 2 * m, rng);  // [[S2, N], [N^T, S1]]
    const Matrix l = Eigen::LLT<Matrix>(omega + 1e-12 * Matrix::Identity(2 * m, 2 * m)).matrixL();
    const int n = 200000;
    const Matrix u = l * gaussian_matrix(2 * m, n, rng);
    const Vector d = (gamma * gp.transpose() * u.topRows(m) - g.transpose() * u.bottomRows(m)).transpose();
    const double mean = d.mean();
    const double var = (d.array() - mean).square().sum() / (n - 1);
    const double se = var * std::sqrt(2.0 / (n - 1));
    const double q = quadratic_form_variance(omega.bottomRightCorner(m, m), omega.topLeftCorner(m, m),
                                             omega.topRightCorner(m, m), g, gp, gamma);
    CHECK(std::abs(q - var) < 3.0 * se);
  }
  CHECK_THROWS_AS(quadratic_form_variance(s1, s2, Matrix::Zero(2, 2), g, gp, 0.5), InputError);
}

TEST_CASE("grad_cosine_report") {
  Rng rng(6);
  const std::vector<int> arch{4, 8, 1};
  SUBCASE("constant delta") {
    auto batch = random_batch(10, 4, rng);
    batch.reward.setConstant(0.7);
    const MlpCritic zero_head = [&] {
      auto c = MlpCritic::random(arch, rng);
      Vector p = c.parameters();
      p.tail(9).setZero();  // head weights and bias
      c.set_parameters(p);
      return c;
    }();
    const auto rep = grad_cosine_report(zero_head, {zero_head, 0.005}, batch, 0.9);
    CHECK_FALSE(rep.cos_var.has_value());
    REQUIRE(rep.cos_mean_sq.has_value());
    CHECK(*rep.cos_mean_sq == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("centered delta") {
    auto batch = random_batch(10, 4, rng);
    const MlpCritic online = MlpCritic::random(arch, rng);
    const TargetCritic target{MlpCritic::random(arch, rng), 0.005};
    const Vector base = td_targets(batch, target, 0.9) - forward_batch(online, batch.x).transpose();
    batch.reward -= Vector::Constant(10, base.mean());
    const auto rep = grad_cosine_report(online, target, batch, 0.9);
    REQUIRE(rep.cos_var.has_value());
    CHECK(*rep.cos_var == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.grad_mean_sq.norm() < 1e-13 * rep.grad_second_moment.norm());
  }
  SUBCASE("identity and finite differences on random batches") {
    for (int t = 0; t < 10; ++t) {
      const auto batch = random_batch(16, 4, rng);
      const MlpCritic online = MlpCritic::random(arch, rng);
      const TargetCritic target{MlpCritic::random(arch, rng), 0.005};
      const auto rep = grad_cosine_report(online, target, batch, 0.9);
      CHECK(rep.identity_residual < 1e-10);
      const Vector y = td_targets(batch, target, 0.9);
      auto var_at = [&](const Vector& p) {
        MlpCritic c = online;
        c.set_parameters(p);
        const Vector d = y - forward_batch(c, batch.x).transpose();
        return (d.array() - d.mean()).square().mean();
      };
      const Vector fd = oracle::central_difference(var_at, online.parameters(), 1e-6);
      CHECK(oracle::max_relative_error(rep.grad_var, fd) < 1e-5);
    }
  }
}

TEST_CASE("normalized_score") {
  CHECK(normalized_score(5.0, 1.0, 5.0) == 100.0);
  CHECK(normalized_score(1.0, 1.0, 5.0) == 0.0);
  CHECK(normalized_score(1607.0, -20.3, 3234.3) == doctest::Approx(50.0).epsilon(1e-12));
  CHECK_THROWS_AS(normalized_score(1.0, 2.0, 2.0), InputError);
}

TEST_CASE("pca_project") {
  Rng rng(7);
  SUBCASE("points on a line") {
    const Vector dir = random_unit_vector(6, rng);
    const Vector t = gaussian_matrix(50, 1, rng);
    const auto p = pca_project(StackedPairSet(t * dir.transpose() + Matrix::Ones(50, 6), 3), 2);
    CHECK(p.scores.col(1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(p.explained == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("isotropic cloud keeps about 2 / (2m) of the variance") {
    const int m = 5;
    const auto p = pca_project(StackedPairSet(gaussian_matrix(20000, 2 * m, rng), m), 2);
    CHECK(p.explained == doctest::Approx(2.0 / (2 * m)).epsilon(0.05));
  }
  SUBCASE("eigenvalue oracle and energy identity") {
    const Matrix y = gaussian_matrix(40, 6, rng) * gaussian_matrix(6, 6, rng);
    const auto p = pca_project(StackedPairSet(y, 3), 2);
    const Matrix centered = y.rowwise() - y.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(centered.transpose() * centered);
    const Vector ev = eig.eigenvalues().reverse();  // descending
    const Vector col_energy = p.scores.colwise().squaredNorm().transpose();
    CHECK(col_energy(0) >= col_energy(1));
    CHECK(col_energy(0) == doctest::Approx(ev(0)).epsilon(1e-10));
    CHECK(col_energy(1) == doctest::Approx(ev(1)).epsilon(1e-10));
    CHECK(p.discarded_energy == doctest::Approx(ev.tail(4).sum()).epsilon(1e-10));
    // Reconstruction error from the 2-D scores equals the discarded energy.
    const Matrix basis = (centered.transpose() * p.scores).householderQr().householderQ() * Matrix::Identity(6, 2);
    const double recon = (centered - centered * basis * basis.transpose()).squaredNorm();
    CHECK(recon == doctest::Approx(p.discarded_energy).epsilon(1e-9));
  }
  CHECK_THROWS_AS(pca_project(StackedPairSet(Matrix::Ones(1, 4), 2)), InputError);
}
