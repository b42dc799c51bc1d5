#include "c4/verify.hpp"

#include "c4/covstats.hpp"
#include "c4/diagnostics.hpp"
#include "c4/gmm.hpp"
#include "c4/policy.hpp"
#include "c4/td_train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace c4 {

namespace {

CheckResult below(std::string name, double value, double tol, std::string detail = {}) {
  return {std::move(name), value, tol, value < tol, true, std::move(detail)};
}

GaussianDist random_gaussian(int d, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  const Matrix q = Eigen::HouseholderQR<Matrix>(gaussian_matrix(d, d, rng)).householderQ();
  Vector eig(d);
  for (int i = 0; i < d; ++i) eig(i) = u(rng);
  Matrix cov = q * eig.asDiagonal() * q.transpose();
  return {gaussian_matrix(d, 1, rng), 0.5 * (cov + cov.transpose())};
}

// Policy covariances sit below the component covariances so every chi^2 term is finite.
ClusterBehavior random_mixture(int d, int m, Rng& rng) {
  ClusterBehavior c;
  std::uniform_real_distribution<double> u(0.2, 1.0);
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    c.components.push_back(random_gaussian(d, rng, 0.6, 2.0));
    c.weights.push_back(u(rng));
    total += c.weights.back();
  }
  for (auto& w : c.weights) w /= total;
  return c;
}

TransitionBatch random_batch(int n, int dim, Rng& rng) {
  TransitionBatch b;
  b.x = gaussian_matrix(dim, n, rng);
  b.x_next = gaussian_matrix(dim, n, rng);
  b.reward = gaussian_matrix(n, 1, rng);
  std::bernoulli_distribution term(0.1);
  b.done = Vector::NullaryExpr(n, [&](Eigen::Index) { return term(rng) ? 1.0 : 0.0; });
  return b;
}

PenaltyCoeffs random_coeffs(Rng& rng, double gamma = 0.99) {
  std::uniform_real_distribution<double> lu(-2.0, 2.0);
  return {std::pow(10.0, lu(rng)), std::pow(10.0, lu(rng)), gamma};
}

double bisect_kappa(double r, const PenaltyCoeffs& c) {
  double lo = 0.0, hi = 1.0;
  while (kappa_residual(hi, r, c) < 0.0) hi *= 2.0;
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    (kappa_residual(mid, r, c) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass || !c.gating; });
}

namespace checks {

CheckResult total_covariance(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int k = 1 + t % 5;
    std::vector<int> labels(50);
    for (int i = 0; i < 50; ++i) labels[i] = i % k;
    std::shuffle(labels.begin(), labels.end(), rng);
    const auto pairs = StackedPairSet(gaussian_matrix(50, 8, rng) * gaussian_matrix(8, 8, rng), 4);
    worst = std::max(worst, total_cov_decomposition(pairs, labels).residual());
  }
  return below("law_of_total_covariance", worst, 1e-10, "max Frobenius residual over 100 labelings");
}

CheckResult within_bound_chain(std::uint64_t seed) {
  Rng rng(seed);
  double worst = -INFINITY;
  for (int t = 0; t < 100; ++t) {
    const int m = 1 + t % 6;
    const Matrix omega = random_psd(2 * m, 1 + t % (2 * m), rng);
    const auto b = within_bound_check(omega.topLeftCorner(m, m), omega.bottomRightCorner(m, m),
                                      omega.topRightCorner(m, m), random_unit_vector(m, rng),
                                      random_unit_vector(m, rng));
    worst = std::max({worst, b.lhs - b.mid, b.mid - b.rhs});
  }
  return {"within_cluster_bound_chain", worst, 1e-10, worst <= 1e-10, true, "max violation of lhs<=mid<=rhs"};
}

CheckResult svd_alignment(std::uint64_t seed) {
  Rng rng(seed);
  double worst = -INFINITY;
  for (int t = 0; t < 200; ++t) {
    const int m = 2 + t % 5;
    const auto a = svd_alignment_bound(gaussian_matrix(m, m, rng), random_unit_vector(m, rng),
                                       random_unit_vector(m, rng));
    worst = std::max(worst, a.lower_bound - a.value);
  }
  return {"svd_alignment_lower_bound", worst, 1e-10, worst <= 1e-10, true, "max of lower_bound - value"};
}

CheckResult svd_alignment_construction(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Matrix c = gaussian_matrix(4, 4, rng);
    Eigen::JacobiSVD<Matrix> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto a = svd_alignment_bound(c, svd.matrixU().col(0), svd.matrixV().col(0));
    const double s1 = svd.singularValues()(0);
    worst = std::max({worst, std::abs(a.value - s1) / s1, std::abs(a.lower_bound - s1) / s1});
  }
  return below("svd_alignment_top_pair", worst, 1e-12, "w'=u1, w=v1 gives sigma_1");
}

CheckResult spectral_norm_vs_svd(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Matrix m = gaussian_matrix(8, 8, rng);
    const double s = Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
    worst = std::max(worst, std::abs(spectral_norm(m) - s) / s);
  }
  return below("spectral_norm_vs_svd", worst, 1e-8);
}

CheckResult em_monotone(std::uint64_t seed, double ridge) {
  Rng rng(seed);
  double worst = INFINITY;
  for (int t = 0; t < 50; ++t) {
    const int k = 1 + t % 4;
    Matrix y = gaussian_matrix(120, 3, rng);
    for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i).array() += 3.0 * static_cast<double>(i % k);
    FitOptions opt;
    opt.components = 1 + t % 5;
    opt.seed = seed + static_cast<std::uint64_t>(t);
    opt.max_iters = 60;
    opt.tol = 0.0;
    opt.ridge = ridge;
    const auto res = fit(y, opt);
    for (std::size_t i = 1; i < res.log_likelihood.size(); ++i)
      if (!res.reseeded[i]) worst = std::min(worst, res.log_likelihood[i] - res.log_likelihood[i - 1]);
  }
  if (!std::isfinite(worst)) worst = 0.0;
  return {ridge > 0.0 ? "em_log_likelihood_monotone_small_ridge" : "em_log_likelihood_monotone_default_ridge",
          worst, -1e-9, worst >= -1e-9, true,
          "min log-likelihood increment over 50 problems; the ridge makes each M-step inexact, so dips of order "
          "ridge can appear near convergence"};
}

CheckResult em_separated_recovery(std::uint64_t seed) {
  Rng rng(seed);
  Matrix y = gaussian_matrix(120, 3, rng);
  std::vector<int> truth(120);
  for (int i = 0; i < 120; ++i) {
    truth[i] = i < 60 ? 0 : 1;
    y(i, 0) += 20.0 * truth[i];
  }
  FitOptions opt;
  opt.components = 2;
  opt.seed = seed;
  const double ari = adjusted_rand_index(hard_labels(fit(y, opt).responsibilities), truth);
  return {"em_separated_ari", ari, 1.0, ari == 1.0, true, "20-sigma separated 2-cluster data"};
}

CheckResult theorem1_linear_exact(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const auto batch = random_batch(64, 4, rng);
    const MlpCritic online({DenseLayer{gaussian_matrix(1, 4, rng), gaussian_matrix(1, 1, rng)}});
    const TargetCritic target{MlpCritic({DenseLayer{gaussian_matrix(1, 4, rng), gaussian_matrix(1, 1, rng)}}), 0.005};
    PerturbSpec spec = default_perturb_spec(batch, 2000);
    spec.k = 0.2 + 0.1 * t;
    spec.k_prime = 0.5;
    const auto draws = draw_perturbations(batch.size(), 4, spec, rng);
    const double direct = direct_var_delta(online, target, batch, spec, 0.99, draws);
    const double composed = estimate_abc(online, target, batch, spec, 0.99, draws).composed;
    worst = std::max(worst, std::abs(direct - composed) / std::max(1.0, std::abs(direct)));
  }
  return below("theorem1_linear_exact", worst, 1e-10, "|direct - composed| for linear critics");
}

CheckResult theorem1_relu_gap(std::uint64_t seed, int seeds, int replicates) {
  std::vector<double> gaps;
  const std::vector<int> arch{4, 16, 16, 1};
  for (int s = 0; s < seeds; ++s) {
    Rng rng(seed * 7919 + static_cast<std::uint64_t>(s));
    const auto batch = random_batch(256, 4, rng);
    const MlpCritic online = MlpCritic::random(arch, rng);
    const TargetCritic target{MlpCritic::random(arch, rng), 0.005};
    const PerturbSpec spec = default_perturb_spec(batch, replicates);
    const auto draws = draw_perturbations(batch.size(), 4, spec, rng);
    const double direct = direct_var_delta(online, target, batch, spec, 0.99, draws);
    const double composed = estimate_abc(online, target, batch, spec, 0.99, draws).composed;
    gaps.push_back(std::abs(direct - composed) / direct);
  }
  std::sort(gaps.begin(), gaps.end());
  const std::size_t h = gaps.size() / 2;
  const double median = gaps.size() % 2 ? gaps[h] : 0.5 * (gaps[h - 1] + gaps[h]);
  return below("theorem1_relu_relative_gap", median, 0.05,
               "median over " + std::to_string(seeds) + " seeds, 2x16 ReLU, k = k' = 0.01 feature std");
}

CheckResult second_moment_identity(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  const std::vector<int> arch{4, 16, 16, 1};
  for (int t = 0; t < 20; ++t) {
    const auto batch = random_batch(128, 4, rng);
    const MlpCritic online = MlpCritic::random(arch, rng);
    const TargetCritic target{MlpCritic::random(arch, rng), 0.005};
    const Vector d = td_targets(batch, target, 0.99) - forward_batch(online, batch.x).transpose();
    const double mean = d.mean();
    const double var = (d.array() - mean).square().mean();
    worst = std::max(worst, std::abs(d.squaredNorm() / static_cast<double>(d.size()) - mean * mean - var));
  }
  return below("second_moment_identity", worst, 1e-12);
}

CheckResult gradient_split_identity(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  const std::vector<int> arch{4, 16, 16, 1};
  for (int t = 0; t < 20; ++t) {
    const auto batch = random_batch(64, 4, rng);
    const MlpCritic online = MlpCritic::random(arch, rng);
    const TargetCritic target{MlpCritic::random(arch, rng), 0.005};
    worst = std::max(worst, grad_cosine_report(online, target, batch, 0.99).identity_residual);
  }
  return below("gradient_split_identity", worst, 1e-10, "max componentwise residual");
}

CheckResult kappa_residuals(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> lu(-2.0, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    PenaltyCoeffs c = random_coeffs(rng);
    if (t % 7 == 0) c.beta_kl = 0.0;
    else if (t % 11 == 0) c.alpha = 0.0;
    const double r = std::pow(10.0, lu(rng));
    worst = std::max(worst, std::abs(kappa_residual(kappa_star(r, c), r, c)));
  }
  return below("kappa_star_residual", worst, 1e-12, "1000 random (R, alpha, beta_kl)");
}

CheckResult kappa_kl_closed_form(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> lu(-2.0, 2.0), ug(0.0, 0.999);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const PenaltyCoeffs c{0.0, std::pow(10.0, lu(rng)), ug(rng)};
    worst = std::max(worst, std::abs(kappa_star(std::pow(10.0, lu(rng)), c) - (1.0 - c.gamma) / c.beta_kl));
  }
  return {"kappa_star_kl_only", worst, 0.0, worst == 0.0, true, "exact (1 - gamma) / beta_kl"};
}

CheckResult kappa_pearson_lambert(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> lu(-2.0, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const PenaltyCoeffs c{std::pow(10.0, lu(rng)), 0.0, 0.99};
    const double r = std::pow(10.0, lu(rng));
    const double k = kappa_star_pearson(r, c);
    worst = std::max({worst, std::abs(k - bisect_kappa(r, c)), std::abs(k - kappa_star(r, c))});
  }
  return below("kappa_star_pearson_lambert_w", worst, 1e-10, "closed form vs bisection and Newton");
}

namespace {

// The cap at the optimal step holds iff R (1-gamma)^2 / (4 beta^2) <= log(beta / (2 alpha)).
double cap_margin(double r, const PenaltyCoeffs& c) {
  return std::log(c.beta_kl / (2.0 * c.alpha)) - r * (1.0 - c.gamma) * (1.0 - c.gamma) / (4.0 * c.beta_kl * c.beta_kl);
}

}  // namespace

CheckResult chi2_cap_regime(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> lu(-2.0, 2.0);
  int tried = 0, bad = 0;
  while (tried < 1000) {
    const PenaltyCoeffs c = random_coeffs(rng);
    const double r = std::pow(10.0, 3.0 * lu(rng));
    if (cap_margin(r, c) < 1e-9) continue;
    ++tried;
    if (!chi2_inflation_at_optimum(r, c).within_cap()) ++bad;
  }
  return {"chi2_cap_provable_regime", static_cast<double>(bad), 0.0, bad == 0, true,
          "violations over 1000 inputs with R(1-gamma)^2/(4 beta^2) <= log(beta/(2 alpha))"};
}

CheckResult chi2_cap_all(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> lu(-2.0, 2.0);
  int bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const PenaltyCoeffs c = random_coeffs(rng);
    if (!chi2_inflation_at_optimum(std::pow(10.0, 3.0 * lu(rng)), c).within_cap()) ++bad;
  }
  // One fixed case: alpha = 0.5, beta_kl = 2, gamma = 0.99 and R = 1e6.
  const auto big = chi2_inflation_at_optimum(1e6, {0.5, 2.0, 0.99});
  return {"chi2_cap_unconditional",
          static_cast<double>(bad),
          0.0,
          bad == 0 && big.within_cap(),
          false,
          "violations over 1000 unrestricted inputs; alpha=0.5, beta_kl=2, R=1e6 gives chi2=" +
              std::to_string(big.chi2) + " vs cap " + std::to_string(big.cap)};
}

CheckResult mixture_bound_1d(std::uint64_t seed) {
  Rng rng(seed);
  double worst = -INFINITY;
  for (int t = 0; t < 100; ++t) {
    const auto pi = random_gaussian(1, rng, 0.2, 0.5);
    const auto mix = random_mixture(1, 2 + t % 3, rng);
    for (auto d : {Divergence::kl, Divergence::chi2, Divergence::mse}) {
      const auto b = mixture_bound_check(pi, mix, d, 0, rng);
      worst = std::max(worst, b.lhs - b.rhs);
    }
  }
  return {"mixture_convexity_1d", worst, 1e-6, worst <= 1e-6, true, "max lhs - rhs, quadrature, 100 cases"};
}

CheckResult mixture_bound_2d(std::uint64_t seed) {
  Rng rng(seed);
  double worst = -INFINITY;
  for (int t = 0; t < 100; ++t) {
    const auto pi = random_gaussian(2, rng, 0.2, 0.5);
    const auto mix = random_mixture(2, 2 + t % 3, rng);
    for (auto d : {Divergence::kl, Divergence::chi2, Divergence::mse}) {
      const auto b = mixture_bound_check(pi, mix, d, 20000, rng);
      worst = std::max(worst, (b.lhs - b.rhs) / std::max(b.std_error, 1e-300));
    }
  }
  return {"mixture_convexity_2d", worst, 3.0, worst <= 3.0, true, "max (lhs - rhs) / se, Monte Carlo, 100 cases"};
}

CheckResult cluster_gradient_unbiased(std::uint64_t seed) {
  Rng rng(seed);
  const auto pi = random_gaussian(2, rng, 0.2, 0.4);
  const auto mix = random_mixture(2, 3, rng);
  const auto r = unbiased_cluster_gradient_check(pi, gaussian_matrix(2, 1, rng), mix, {0.05, 0.1, 0.9}, 10000, rng);
  return below("cluster_sampled_gradient_unbiased", r.max_sigma, 3.0, "max |sampled - full| / se at 1e4 trials");
}

CheckResult cql_tabular(std::uint64_t seed) {
  Rng rng(seed);
  double worst = -INFINITY;
  for (int t = 0; t < 20; ++t) {
    const auto mdp = random_tabular_mdp(5, 2, rng);
    const auto res = cql_tabular_check(mdp, random_tabular_policy(5, 2, rng), random_tabular_policy(5, 2, rng),
                                       0.1 + 0.05 * t, 0.9);
    worst = std::max(worst, (res.lower_bound - res.target).maxCoeff());
  }
  return {"cql_global_lower_bound", worst, 1e-12, worst <= 1e-12, true, "max of bound - target, 20 MDPs"};
}

}  // namespace checks

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"covariance", "gmm", "theorem1", "policy"};
  return names;
}

bool is_suite(const std::string& name) {
  return name == "all" || std::find(suite_names().begin(), suite_names().end(), name) != suite_names().end();
}

std::vector<SuiteReport> run_suite(const std::string& name, std::uint64_t seed) {
  require(is_suite(name), "unknown suite '" + name + "'");
  if (name == "all") {
    std::vector<SuiteReport> out;
    for (const auto& s : suite_names()) out.push_back(run_suite(s, seed).front());
    return out;
  }
  using namespace checks;
  SuiteReport rep{name, {}};
  if (name == "covariance") {
    rep.checks = {total_covariance(seed), within_bound_chain(seed), svd_alignment(seed),
                  svd_alignment_construction(seed), spectral_norm_vs_svd(seed)};
  } else if (name == "gmm") {
    CheckResult loose = em_monotone(seed);
    loose.gating = false;
    rep.checks = {em_monotone(seed, 1e-9), loose, em_separated_recovery(seed)};
  } else if (name == "theorem1") {
    rep.checks = {theorem1_linear_exact(seed), theorem1_relu_gap(seed), second_moment_identity(seed),
                  gradient_split_identity(seed)};
  } else {
    rep.checks = {kappa_residuals(seed),   kappa_kl_closed_form(seed), kappa_pearson_lambert(seed),
                  chi2_cap_regime(seed),   chi2_cap_all(seed),         mixture_bound_1d(seed),
                  mixture_bound_2d(seed),  cluster_gradient_unbiased(seed), cql_tabular(seed)};
  }
  return {rep};
}

std::string report_json(const std::vector<SuiteReport>& reports) {
  nlohmann::json doc = {{"suites", nlohmann::json::array()}};
  bool all = true;
  for (const auto& r : reports) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : r.checks)
      checks.push_back({{"name", c.name},
                        {"value", c.value},
                        {"tolerance", c.tolerance},
                        {"pass", c.pass},
                        {"gating", c.gating},
                        {"detail", c.detail}});
    doc["suites"].push_back({{"suite", r.suite}, {"pass", r.passed()}, {"checks", checks}});
    all = all && r.passed();
  }
  doc["pass"] = all;
  return doc.dump(2) + "\n";
}

}  // namespace c4
