#include "c4/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace c4 {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::LLT<Matrix> checked_llt(const Matrix& cov, const char* who) {
  require(cov.rows() == cov.cols() && cov.rows() > 0, std::string(who) + ": covariance must be square");
  require(cov.allFinite() && (cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + cov.cwiseAbs().maxCoeff()),
          std::string(who) + ": covariance must be symmetric");
  Eigen::LLT<Matrix> llt(cov);
  require(llt.info() == Eigen::Success, std::string(who) + ": covariance is not positive definite");
  return llt;
}

double log_det(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

void same_dims(const GaussianDist& p, const GaussianDist& q, const char* who) {
  require(p.dim() == q.dim() && p.cov.rows() == p.dim() && q.cov.rows() == q.dim(),
          std::string(who) + ": dimension mismatch");
}

// Pieces of int p^2 / q: A = 2P_p - P_q, b = 2P_p mu_p - P_q mu_q.
struct Chi2Parts {
  bool finite = false;
  double log_one_plus = 0.0;  // log(1 + chi^2)
  Vector a_inv_b;
  Matrix p_prec;
};

Chi2Parts chi2_parts(const GaussianDist& p, const GaussianDist& q) {
  same_dims(p, q, "gaussian_chi2");
  const auto lp = checked_llt(p.cov, "gaussian_chi2");
  const auto lq = checked_llt(q.cov, "gaussian_chi2");
  const Eigen::Index d = p.dim();
  const Matrix pp = lp.solve(Matrix::Identity(d, d));
  const Matrix pq = lq.solve(Matrix::Identity(d, d));
  Chi2Parts out;
  out.p_prec = pp;
  Matrix a = 2.0 * pp - pq;
  a = 0.5 * (a + a.transpose());
  Eigen::LLT<Matrix> la(a);
  if (la.info() != Eigen::Success) return out;
  const Vector b = 2.0 * pp * p.mean - pq * q.mean;
  const double c = 2.0 * p.mean.dot(pp * p.mean) - q.mean.dot(pq * q.mean);
  out.a_inv_b = la.solve(b);
  out.log_one_plus = -log_det(lp) + 0.5 * log_det(lq) - 0.5 * log_det(la) + 0.5 * b.dot(out.a_inv_b) - 0.5 * c;
  out.finite = true;
  return out;
}

// int N(x; m1, S1) N(x; m2, S2) dx = N(m1; m2, S1 + S2)
double gaussian_overlap(const GaussianDist& p, const GaussianDist& q) {
  return std::exp(gaussian_log_density({q.mean, p.cov + q.cov}, p.mean));
}

}  // namespace

void GaussianDist::validate() const {
  require(cov.rows() == mean.size(), "GaussianDist: mean and covariance dimensions differ");
  checked_llt(cov, "GaussianDist");
}

double gaussian_log_density(const GaussianDist& p, const Vector& x) {
  return gaussian_log_density_batch(p, x)(0);
}

Vector gaussian_log_density_batch(const GaussianDist& p, const Matrix& x) {
  require(x.rows() == p.dim(), "gaussian_log_density: dimension mismatch");
  const auto llt = checked_llt(p.cov, "gaussian_log_density");
  Matrix centered = x.colwise() - p.mean;
  llt.matrixL().solveInPlace(centered);
  const double norm = 0.5 * (log_det(llt) + static_cast<double>(p.dim()) * kLog2Pi);
  return (-0.5 * centered.colwise().squaredNorm().array() - norm).transpose();
}

Matrix gaussian_sample(const GaussianDist& p, int n, Rng& rng) {
  const auto llt = checked_llt(p.cov, "gaussian_sample");
  const Matrix l = llt.matrixL();
  return (l * gaussian_matrix(p.dim(), n, rng)).colwise() + p.mean;
}

void PenaltyCoeffs::validate() const {
  require(alpha >= 0.0 && beta_kl >= 0.0, "penalty coefficients must be >= 0");
  require(alpha + beta_kl > 0.0, "at least one of alpha, beta_kl must be positive");
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
}

void ClusterBehavior::validate() const {
  require(!components.empty() && components.size() == weights.size(), "ClusterBehavior: one weight per component");
  double total = 0.0;
  for (std::size_t m = 0; m < components.size(); ++m) {
    require(weights[m] >= 0.0, "ClusterBehavior: negative weight");
    require(components[m].dim() == components[0].dim(), "ClusterBehavior: component dimensions differ");
    components[m].validate();
    total += weights[m];
  }
  require(std::abs(total - 1.0) < 1e-9, "ClusterBehavior: weights must sum to 1");
}

double gaussian_kl(const GaussianDist& p, const GaussianDist& q) {
  same_dims(p, q, "gaussian_kl");
  const auto lp = checked_llt(p.cov, "gaussian_kl");
  const auto lq = checked_llt(q.cov, "gaussian_kl");
  const double d = static_cast<double>(p.dim());
  const Vector diff = q.mean - p.mean;
  const double trace = lq.solve(p.cov).trace();
  const double maha = diff.dot(lq.solve(diff));
  return 0.5 * (trace + maha - d + log_det(lq) - log_det(lp));
}

double gaussian_chi2_equal_cov(const Vector& mu1, const Vector& mu2, const Matrix& sigma) {
  require(mu1.size() == mu2.size() && sigma.rows() == mu1.size(), "gaussian_chi2_equal_cov: dimension mismatch");
  const auto llt = checked_llt(sigma, "gaussian_chi2_equal_cov");
  const Vector diff = mu1 - mu2;
  return std::expm1(diff.dot(llt.solve(diff)));
}

double gaussian_chi2(const GaussianDist& p, const GaussianDist& q) {
  const auto parts = chi2_parts(p, q);
  if (!parts.finite) return std::numeric_limits<double>::infinity();
  return std::expm1(parts.log_one_plus);
}

double gaussian_l2(const GaussianDist& p, const GaussianDist& q) {
  same_dims(p, q, "gaussian_l2");
  return gaussian_overlap(p, p) - 2.0 * gaussian_overlap(p, q) + gaussian_overlap(q, q);
}

Vector gaussian_kl_grad_mean(const GaussianDist& p, const GaussianDist& q) {
  same_dims(p, q, "gaussian_kl_grad_mean");
  return checked_llt(q.cov, "gaussian_kl_grad_mean").solve(p.mean - q.mean);
}

Vector gaussian_chi2_grad_mean(const GaussianDist& p, const GaussianDist& q) {
  const auto parts = chi2_parts(p, q);
  if (!parts.finite) throw NumericalError("gaussian_chi2_grad_mean: divergence is infinite");
  return std::exp(parts.log_one_plus) * 2.0 * parts.p_prec * (parts.a_inv_b - p.mean);
}

Vector gaussian_l2_grad_mean(const GaussianDist& p, const GaussianDist& q) {
  same_dims(p, q, "gaussian_l2_grad_mean");
  // int p^2 does not depend on mu_p; d/dmu N(mu; m, S) = -N S^-1 (mu - m).
  const Matrix s = p.cov + q.cov;
  return 2.0 * gaussian_overlap(p, q) * checked_llt(s, "gaussian_l2_grad_mean").solve(p.mean - q.mean);
}

double lambert_w(double z) {
  require(z >= 0.0 && std::isfinite(z), "lambert_w: argument must be finite and >= 0");
  if (z == 0.0) return 0.0;
  double w = z < 1.0 ? z / (1.0 + z) : std::log1p(z) - std::log1p(std::log1p(z)) * 0.5;
  if (w <= 0.0) w = std::log1p(z) * 0.5;
  for (int it = 0; it < 100; ++it) {
    const double ew = std::exp(w);
    const double f = w * ew - z;
    double step = f / (ew * (w + 1.0));
    // w e^w is increasing on w >= 0; keep iterates in that region.
    if (w - step < 0.0) step = 0.5 * w;
    w -= step;
    if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(w))) break;
  }
  return w;
}

double kappa_residual(double kappa, double r, const PenaltyCoeffs& coeffs) {
  const double rho = coeffs.rho_bar();
  const double pearson = coeffs.alpha > 0.0 ? 2.0 * coeffs.alpha * rho * std::exp(kappa * kappa * r) : 0.0;
  return (pearson + coeffs.beta_kl * rho) * kappa - 1.0;
}

double kappa_star(double r, const PenaltyCoeffs& coeffs) {
  require(r > 0.0 && std::isfinite(r), "kappa_star: R must be positive");
  coeffs.validate();
  const double rho = coeffs.rho_bar();
  if (coeffs.alpha == 0.0) return (1.0 - coeffs.gamma) / coeffs.beta_kl;

  // The residual is -1 at 0 and increasing; each penalty alone caps kappa.
  double lo = 0.0;
  double hi = 1.0 / (2.0 * coeffs.alpha * rho);
  if (coeffs.beta_kl > 0.0) hi = std::min(hi, 1.0 / (coeffs.beta_kl * rho));
  double k = 0.5 * hi;
  for (int it = 0; it < 200; ++it) {
    const double f = kappa_residual(k, r, coeffs);
    if (f == 0.0) return k;
    if (f > 0.0)
      hi = k;
    else
      lo = k;
    const double e = std::exp(k * k * r);
    const double df = 2.0 * coeffs.alpha * rho * e * (1.0 + 2.0 * k * k * r) + coeffs.beta_kl * rho;
    double next = k - f / df;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - k) <= 1e-17 * k || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) {
      k = next;
      break;
    }
    k = next;
  }
  return k;
}

double kappa_star_pearson(double r, const PenaltyCoeffs& coeffs) {
  require(r > 0.0, "kappa_star_pearson: R must be positive");
  require(coeffs.alpha > 0.0 && coeffs.beta_kl == 0.0, "kappa_star_pearson: needs alpha > 0 and beta_kl = 0");
  const double l = coeffs.alpha * coeffs.rho_bar();
  return std::sqrt(lambert_w(r / (2.0 * l * l)) / (2.0 * r));
}

Vector policy_update_mean(const Vector& mu_beta, const Matrix& sigma_beta, const Vector& g, double kappa) {
  require(sigma_beta.rows() == mu_beta.size() && sigma_beta.cols() == mu_beta.size() && g.size() == mu_beta.size(),
          "policy_update_mean: dimension mismatch");
  checked_llt(sigma_beta, "policy_update_mean");
  return mu_beta + kappa * (sigma_beta * g);
}

Vector surrogate_gradient(const Vector& mu, const Vector& mu_beta, const Matrix& sigma_beta, const Vector& g,
                          const PenaltyCoeffs& coeffs) {
  const GaussianDist pi{mu, sigma_beta}, beta{mu_beta, sigma_beta};
  Vector out = g;
  if (coeffs.alpha > 0.0) out -= coeffs.rho_bar() * coeffs.alpha * gaussian_chi2_grad_mean(pi, beta);
  if (coeffs.beta_kl > 0.0) out -= coeffs.rho_bar() * coeffs.beta_kl * gaussian_kl_grad_mean(pi, beta);
  return out;
}

McEstimate per_cluster_objective(const GaussianDist& policy, const MlpCritic& critic, const Matrix& states,
                                 const GaussianDist& nu, const PenaltyCoeffs& coeffs, int n_mc, Rng& rng) {
  require(n_mc >= 1, "per_cluster_objective: n_mc must be >= 1");
  require(states.cols() >= 1, "per_cluster_objective: need at least one state");
  require(critic.input_dim() == states.rows() + policy.dim(), "per_cluster_objective: critic input mismatch");
  const Matrix actions = gaussian_sample(policy, n_mc, rng);
  Matrix x(critic.input_dim(), n_mc);
  for (int i = 0; i < n_mc; ++i) x.col(i).head(states.rows()) = states.col(i % states.cols());
  x.bottomRows(policy.dim()) = actions;
  const Vector q = forward_batch(critic, x).transpose();
  const double mean = q.mean();
  const double var = n_mc > 1 ? (q.array() - mean).square().sum() / (n_mc - 1) : 0.0;

  double pen = 0.0;
  if (coeffs.alpha > 0.0) pen += coeffs.alpha * gaussian_chi2(policy, nu);
  if (coeffs.beta_kl > 0.0) pen += coeffs.beta_kl * gaussian_kl(policy, nu);
  return {mean - coeffs.rho_bar() * pen, std::sqrt(var / n_mc)};
}

const char* to_string(Divergence d) {
  switch (d) {
    case Divergence::kl: return "kl";
    case Divergence::chi2: return "chi2";
    case Divergence::mse: return "mse";
  }
  return "?";
}

double gaussian_divergence(Divergence d, const GaussianDist& p, const GaussianDist& q) {
  switch (d) {
    case Divergence::kl: return gaussian_kl(p, q);
    case Divergence::chi2: return gaussian_chi2(p, q);
    case Divergence::mse: return gaussian_l2(p, q);
  }
  return 0.0;
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol, int max_depth) {
  struct Rec {
    const std::function<double(double)>& f;
    double go(double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) const {
      const double m = 0.5 * (a + b);
      const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      const double flm = f(lm), frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      const double delta = left + right - whole;
      // The relative floor stops refinement once rounding noise dominates.
      if (depth <= 0 || std::abs(delta) <= 15.0 * std::max(tol, 1e-14 * std::abs(left + right)))
        return left + right + delta / 15.0;
      return go(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + go(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    }
  } rec{f};
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return rec.go(a, b, fa, fm, fb, whole, tol, max_depth);
}

namespace {

double mixture_log_density(const ClusterBehavior& c, const Matrix& x, Eigen::Index col) {
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(c.components.size());
  for (std::size_t m = 0; m < c.components.size(); ++m) {
    if (c.weights[m] <= 0.0) continue;
    terms.push_back(std::log(c.weights[m]) + gaussian_log_density(c.components[m], x.col(col)));
    mx = std::max(mx, terms.back());
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

Vector mixture_log_density_batch(const ClusterBehavior& c, const Matrix& x) {
  Matrix terms(x.cols(), c.size());
  int used = 0;
  for (int m = 0; m < c.size(); ++m) {
    if (c.weights[static_cast<std::size_t>(m)] <= 0.0) continue;
    terms.col(used++) = gaussian_log_density_batch(c.components[static_cast<std::size_t>(m)], x).array() +
                        std::log(c.weights[static_cast<std::size_t>(m)]);
  }
  const auto t = terms.leftCols(used);
  const Vector mx = t.rowwise().maxCoeff();
  return mx.array() + (t.colwise() - mx).array().exp().rowwise().sum().log();
}

// Integrand of D(pi || nu) in terms of log densities.
double divergence_integrand(Divergence d, double lp, double ln) {
  switch (d) {
    case Divergence::kl: return lp < -700.0 ? 0.0 : std::exp(lp) * (lp - ln);
    case Divergence::chi2: return std::exp(2.0 * lp - ln);
    case Divergence::mse: {
      const double diff = std::exp(lp) - std::exp(ln);
      return diff * diff;
    }
  }
  return 0.0;
}

// The same integrand divided by the proposal density exp(lq).
double importance_term(Divergence d, double lp, double ln, double lq) {
  switch (d) {
    case Divergence::kl: return std::exp(lp - lq) * (lp - ln);
    case Divergence::chi2: return std::exp(2.0 * lp - ln - lq);
    case Divergence::mse: {
      const double diff = std::exp(lp - 0.5 * lq) - std::exp(ln - 0.5 * lq);
      return diff * diff;
    }
  }
  return 0.0;
}

}  // namespace

MixtureBound mixture_bound_check(const GaussianDist& policy, const ClusterBehavior& clusters, Divergence d, int n_mc,
                                 Rng& rng) {
  clusters.validate();
  policy.validate();
  require(policy.dim() == clusters.components[0].dim(), "mixture_bound_check: dimension mismatch");
  MixtureBound out;
  for (std::size_t m = 0; m < clusters.components.size(); ++m)
    if (clusters.weights[m] > 0.0) out.rhs += clusters.weights[m] * gaussian_divergence(d, policy, clusters.components[m]);

  int active = 0;
  for (double w : clusters.weights) active += w > 0.0;
  if (active == 1) {
    // The mixture is a single Gaussian; both sides are the same closed form.
    for (std::size_t m = 0; m < clusters.components.size(); ++m)
      if (clusters.weights[m] > 0.0) out.lhs = gaussian_divergence(d, policy, clusters.components[m]);
    if (!std::isfinite(out.lhs)) throw NumericalError("mixture_bound_check: divergence is not finite");
    return out;
  }

  if (policy.dim() == 1) {
    double lo = policy.mean(0) - 14.0 * std::sqrt(policy.cov(0, 0));
    double hi = policy.mean(0) + 14.0 * std::sqrt(policy.cov(0, 0));
    for (const auto& c : clusters.components) {
      lo = std::min(lo, c.mean(0) - 14.0 * std::sqrt(c.cov(0, 0)));
      hi = std::max(hi, c.mean(0) + 14.0 * std::sqrt(c.cov(0, 0)));
    }
    Matrix pt(1, 1);
    auto f = [&](double a) {
      pt(0, 0) = a;
      return divergence_integrand(d, gaussian_log_density(policy, pt.col(0)), mixture_log_density(clusters, pt, 0));
    };
    // Split the range so narrow peaks are seen by the first Simpson pass.
    const int pieces = 64;
    double total = 0.0;
    for (int i = 0; i < pieces; ++i)
      total += adaptive_simpson(f, lo + (hi - lo) * i / pieces, lo + (hi - lo) * (i + 1) / pieces, 1e-11 / pieces);
    out.lhs = d == Divergence::chi2 ? total - 1.0 : total;
  } else {
    require(n_mc >= 2, "mixture_bound_check: n_mc must be >= 2");
    // Proposal q = 0.5 pi + 0.5 nu keeps every weight pi / q below 2.
    const Eigen::Index dim = policy.dim();
    std::vector<Matrix> factors;
    for (const auto& c : clusters.components) factors.push_back(checked_llt(c.cov, "mixture_bound_check").matrixL());
    const Matrix pi_factor = checked_llt(policy.cov, "mixture_bound_check").matrixL();
    std::bernoulli_distribution coin(0.5);
    std::discrete_distribution<int> pick(clusters.weights.begin(), clusters.weights.end());
    const Matrix eps = gaussian_matrix(dim, n_mc, rng);
    Matrix x(dim, n_mc);
    for (int i = 0; i < n_mc; ++i) {
      if (coin(rng)) {
        x.col(i) = policy.mean + pi_factor * eps.col(i);
      } else {
        const auto m = static_cast<std::size_t>(pick(rng));
        x.col(i) = clusters.components[m].mean + factors[m] * eps.col(i);
      }
    }
    const Vector lp = gaussian_log_density_batch(policy, x);
    const Vector ln = mixture_log_density_batch(clusters, x);
    Vector terms(n_mc);
    for (int i = 0; i < n_mc; ++i) {
      const double mx = std::max(lp(i), ln(i));
      const double lq = mx + std::log(0.5 * std::exp(lp(i) - mx) + 0.5 * std::exp(ln(i) - mx));
      terms(i) = importance_term(d, lp(i), ln(i), lq);
    }
    const double mean = terms.mean();
    out.std_error = std::sqrt((terms.array() - mean).square().sum() / (n_mc - 1) / n_mc);
    out.lhs = d == Divergence::chi2 ? mean - 1.0 : mean;
  }
  if (!std::isfinite(out.lhs) || !std::isfinite(out.rhs) || !std::isfinite(out.std_error))
    throw NumericalError("mixture_bound_check: divergence estimate is not finite");
  return out;
}

Vector cluster_objective_gradient(const GaussianDist& policy, const Vector& q_slope, const GaussianDist& nu,
                                  const PenaltyCoeffs& coeffs) {
  Vector g = q_slope;
  if (coeffs.alpha > 0.0) g -= coeffs.rho_bar() * coeffs.alpha * gaussian_chi2_grad_mean(policy, nu);
  if (coeffs.beta_kl > 0.0) g -= coeffs.rho_bar() * coeffs.beta_kl * gaussian_kl_grad_mean(policy, nu);
  return g;
}

GradientUnbiasedness unbiased_cluster_gradient_check(const GaussianDist& policy, const Vector& q_slope,
                                                     const ClusterBehavior& clusters, const PenaltyCoeffs& coeffs,
                                                     int n_trials, Rng& rng) {
  clusters.validate();
  coeffs.validate();
  require(n_trials >= 1, "unbiased_cluster_gradient_check: n_trials must be >= 1");
  const Eigen::Index d = policy.dim();
  std::vector<Vector> grads;
  GradientUnbiasedness out;
  out.full = Vector::Zero(d);
  for (int m = 0; m < clusters.size(); ++m) {
    grads.push_back(cluster_objective_gradient(policy, q_slope, clusters.components[static_cast<std::size_t>(m)], coeffs));
    out.full += clusters.weights[static_cast<std::size_t>(m)] * grads.back();
  }
  // Tally the draws, then average the per-cluster gradients by visit count.
  std::discrete_distribution<int> pick(clusters.weights.begin(), clusters.weights.end());
  std::vector<double> counts(grads.size(), 0.0);
  for (int t = 0; t < n_trials; ++t) counts[static_cast<std::size_t>(pick(rng))] += 1.0;
  out.sampled = Vector::Zero(d);
  for (std::size_t m = 0; m < grads.size(); ++m) out.sampled += (counts[m] / n_trials) * grads[m];
  Vector second = Vector::Zero(d);
  for (std::size_t m = 0; m < grads.size(); ++m)
    second += (counts[m] / n_trials) * grads[m].cwiseProduct(grads[m]);
  const double nt = static_cast<double>(n_trials);
  const Vector var = ((second - out.sampled.cwiseProduct(out.sampled)) * (nt / std::max(nt - 1.0, 1.0))).cwiseMax(0.0);
  out.std_error = (var / nt).cwiseSqrt();
  out.max_sigma = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double dev = std::abs(out.sampled(i) - out.full(i));
    if (out.std_error(i) > 0.0)
      out.max_sigma = std::max(out.max_sigma, dev / out.std_error(i));
    else if (dev > 1e-12 * (1.0 + std::abs(out.full(i))))
      out.max_sigma = std::numeric_limits<double>::infinity();
  }
  return out;
}

double cql_global_lower_bound(double expected_q, double sup_chi2, double alpha, double gamma) {
  require(sup_chi2 >= 0.0 && alpha >= 0.0, "cql_global_lower_bound: need sup_chi2 >= 0 and alpha >= 0");
  require(gamma >= 0.0 && gamma < 1.0, "cql_global_lower_bound: gamma must lie in [0, 1)");
  return expected_q - alpha * sup_chi2 / (1.0 - gamma);
}

Chi2Inflation chi2_inflation_at_optimum(double r, const PenaltyCoeffs& coeffs) {
  require(coeffs.alpha > 0.0, "chi2_inflation_at_optimum: alpha must be > 0");
  const double k = kappa_star(r, coeffs);
  return {std::expm1(k * k * r), coeffs.beta_kl / (2.0 * coeffs.alpha) - 1.0};
}

double discrete_chi2(const Vector& p, const Vector& q) {
  require(p.size() == q.size() && p.size() > 0, "discrete_chi2: size mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    require(q(i) > 0.0 || p(i) == 0.0, "discrete_chi2: p is not absolutely continuous w.r.t. q");
    if (p(i) > 0.0) s += p(i) * p(i) / q(i);
  }
  return s - 1.0;
}

TabularMdp random_tabular_mdp(int states, int actions, Rng& rng) {
  require(states >= 1 && actions >= 1, "random_tabular_mdp: need states, actions >= 1");
  TabularMdp mdp{states, actions, Matrix(states * actions, states), Vector(states * actions)};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < states * actions; ++i) {
    for (int s = 0; s < states; ++s) mdp.transition(i, s) = u(rng);
    mdp.transition.row(i) /= mdp.transition.row(i).sum();
    mdp.reward(i) = 2.0 * u(rng) - 1.0;
  }
  return mdp;
}

Matrix random_tabular_policy(int states, int actions, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix pi(states, actions);
  for (int s = 0; s < states; ++s) {
    for (int a = 0; a < actions; ++a) pi(s, a) = u(rng);
    pi.row(s) /= pi.row(s).sum();
  }
  return pi;
}

bool CqlTabularResult::holds(double tol) const {
  return (target.array() >= lower_bound.array() - tol).all() && (resolvent.array() <= resolvent_cap + tol).all();
}

CqlTabularResult cql_tabular_check(const TabularMdp& mdp, const Matrix& pi, const Matrix& pi_beta, double alpha,
                                   double gamma) {
  const int S = mdp.states, A = mdp.actions;
  require(pi.rows() == S && pi.cols() == A && pi_beta.rows() == S && pi_beta.cols() == A,
          "cql_tabular_check: policy shape mismatch");
  require(gamma >= 0.0 && gamma < 1.0 && alpha >= 0.0, "cql_tabular_check: bad alpha or gamma");

  // State-action chain under pi, then Q^pi exactly.
  Matrix p_sa = Matrix::Zero(S * A, S * A);
  for (int i = 0; i < S * A; ++i)
    for (int s2 = 0; s2 < S; ++s2)
      for (int a2 = 0; a2 < A; ++a2) p_sa(i, s2 * A + a2) = mdp.transition(i, s2) * pi(s2, a2);
  const Vector q = (Matrix::Identity(S * A, S * A) - gamma * p_sa).partialPivLu().solve(mdp.reward);

  Matrix p_s = Matrix::Zero(S, S);
  Vector v(S), expected_q(S), chi2(S);
  for (int s = 0; s < S; ++s) {
    v(s) = 0.0;
    for (int a = 0; a < A; ++a) {
      v(s) += pi(s, a) * q(s * A + a);
      p_s.row(s) += pi(s, a) * mdp.transition.row(s * A + a);
    }
    chi2(s) = discrete_chi2(pi.row(s).transpose(), pi_beta.row(s).transpose());
  }
  expected_q = v;

  CqlTabularResult out;
  out.resolvent = (Matrix::Identity(S, S) - gamma * p_s).partialPivLu().solve(chi2);
  out.resolvent_cap = chi2.cwiseAbs().maxCoeff() / (1.0 - gamma);
  out.target = v - alpha * out.resolvent;
  const double sup = std::max(0.0, chi2.maxCoeff());
  out.lower_bound.resize(S);
  for (int s = 0; s < S; ++s) out.lower_bound(s) = cql_global_lower_bound(expected_q(s), sup, alpha, gamma);
  return out;
}

}  // namespace c4
