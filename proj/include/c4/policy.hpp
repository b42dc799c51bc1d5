#pragma once

// Gaussian policy improvement against per-cluster behavior components:
// closed-form KL / Pearson chi^2 / L2 divergences, the isotropic step size
// kappa*, mixture-convexity checks and the tabular CQL lower bound.

#include "c4/linalg.hpp"
#include "c4/mlp.hpp"

#include <functional>
#include <vector>

namespace c4 {

struct GaussianDist {
  Vector mean;
  Matrix cov;

  Eigen::Index dim() const { return mean.size(); }
  void validate() const;  // throws InputError unless cov is symmetric PD
};

double gaussian_log_density(const GaussianDist& p, const Vector& x);
/// Columns of x are points.
Vector gaussian_log_density_batch(const GaussianDist& p, const Matrix& x);
Matrix gaussian_sample(const GaussianDist& p, int n, Rng& rng);  // dim x n

/// Policy-side coefficients. beta_kl is the KL weight.
struct PenaltyCoeffs {
  double alpha = 0.0;
  double beta_kl = 0.0;
  double gamma = 0.99;

  double rho_bar() const { return 1.0 / (1.0 - gamma); }
  void validate() const;
};

struct ClusterBehavior {
  std::vector<GaussianDist> components;
  std::vector<double> weights;

  int size() const { return static_cast<int>(components.size()); }
  void validate() const;
};

double gaussian_kl(const GaussianDist& p, const GaussianDist& q);
/// exp(d^T S^-1 d) - 1 with d = mu1 - mu2.
double gaussian_chi2_equal_cov(const Vector& mu1, const Vector& mu2, const Matrix& sigma);
/// int p^2 / q - 1; +infinity when 2 P_p - P_q is not positive definite.
double gaussian_chi2(const GaussianDist& p, const GaussianDist& q);
/// int (p - q)^2
double gaussian_l2(const GaussianDist& p, const GaussianDist& q);

/// Gradients in the mean of the first argument.
Vector gaussian_kl_grad_mean(const GaussianDist& p, const GaussianDist& q);
Vector gaussian_chi2_grad_mean(const GaussianDist& p, const GaussianDist& q);
Vector gaussian_l2_grad_mean(const GaussianDist& p, const GaussianDist& q);

/// Principal branch, z >= 0.
double lambert_w(double z);

/// (2 alpha rho e^{k^2 R} + beta_kl rho) k - 1
double kappa_residual(double kappa, double r, const PenaltyCoeffs& coeffs);
/// Unique positive root of kappa_residual.
double kappa_star(double r, const PenaltyCoeffs& coeffs);
/// Closed form when beta_kl = 0: sqrt(W(R / (2 l^2)) / (2R)), l = alpha rho.
double kappa_star_pearson(double r, const PenaltyCoeffs& coeffs);

Vector policy_update_mean(const Vector& mu_beta, const Matrix& sigma_beta, const Vector& g, double kappa);

/// Gradient in mu of g^T (mu - mu_b) - rho (alpha chi^2 + beta_kl KL) with
/// equal covariances; zero at the optimal step.
Vector surrogate_gradient(const Vector& mu, const Vector& mu_beta, const Matrix& sigma_beta, const Vector& g,
                          const PenaltyCoeffs& coeffs);

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// E_s E_{a~pi} Q(s, a) - rho (alpha chi^2(pi||nu) + beta_kl KL(pi||nu)).
/// `states` is ds x n; Monte-Carlo pairs cycle through the states in order.
McEstimate per_cluster_objective(const GaussianDist& policy, const MlpCritic& critic, const Matrix& states,
                                 const GaussianDist& nu, const PenaltyCoeffs& coeffs, int n_mc, Rng& rng);

enum class Divergence { kl, chi2, mse };
const char* to_string(Divergence d);

double gaussian_divergence(Divergence d, const GaussianDist& p, const GaussianDist& q);

struct MixtureBound {
  double lhs = 0.0;     // D(pi || sum w nu)
  double rhs = 0.0;     // sum w D(pi || nu)
  double std_error = 0.0;  // 0 for quadrature
  bool holds(double tol) const { return lhs <= rhs + 3.0 * std_error + tol; }
};

/// lhs by adaptive Simpson quadrature in 1-D and by importance sampling
/// (proposal 0.5 pi + 0.5 mixture) otherwise; rhs in closed form.
MixtureBound mixture_bound_check(const GaussianDist& policy, const ClusterBehavior& clusters, Divergence d, int n_mc,
                                 Rng& rng);

/// Adaptive Simpson on [a, b].
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol, int max_depth = 30);

struct GradientUnbiasedness {
  Vector sampled;  // mean over z ~ w of grad J_z
  Vector full;     // grad sum_m w_m J_m
  Vector std_error;  // per coordinate
  double max_sigma = 0.0;  // max_i |sampled_i - full_i| / std_error_i
};

/// J_z(mu) = q_slope^T mu - rho (alpha chi^2(pi||nu_z) + beta_kl KL(pi||nu_z)),
/// the Gaussian-policy objective with a linear critic in the action.
GradientUnbiasedness unbiased_cluster_gradient_check(const GaussianDist& policy, const Vector& q_slope,
                                                     const ClusterBehavior& clusters, const PenaltyCoeffs& coeffs,
                                                     int n_trials, Rng& rng);
Vector cluster_objective_gradient(const GaussianDist& policy, const Vector& q_slope, const GaussianDist& nu,
                                  const PenaltyCoeffs& coeffs);

/// expected_q - alpha sup_chi2 / (1 - gamma)
double cql_global_lower_bound(double expected_q, double sup_chi2, double alpha, double gamma);

struct Chi2Inflation {
  double chi2 = 0.0;
  double cap = 0.0;  // beta_kl / (2 alpha) - 1
  bool within_cap() const { return chi2 <= cap + 1e-10; }
};
Chi2Inflation chi2_inflation_at_optimum(double r, const PenaltyCoeffs& coeffs);

/// sum_a p^2 / q - 1 over a finite action set.
double discrete_chi2(const Vector& p, const Vector& q);

struct TabularMdp {
  int states = 0;
  int actions = 0;
  Matrix transition;  // (S*A) x S, row s*A + a
  Vector reward;      // S*A
};

TabularMdp random_tabular_mdp(int states, int actions, Rng& rng);
/// Row-stochastic S x A matrix with entries bounded away from zero.
Matrix random_tabular_policy(int states, int actions, Rng& rng);

struct CqlTabularResult {
  Vector target;       // V^pi - alpha (I - gamma P^pi)^-1 chi2
  Vector lower_bound;  // E_pi Q^pi - alpha rho sup chi2
  Vector resolvent;    // (I - gamma P^pi)^-1 chi2
  double resolvent_cap = 0.0;  // ||chi2||_inf / (1 - gamma)
  bool holds(double tol) const;
};

CqlTabularResult cql_tabular_check(const TabularMdp& mdp, const Matrix& pi, const Matrix& pi_beta, double alpha,
                                   double gamma);

}  // namespace c4
