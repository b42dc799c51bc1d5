#pragma once

// Invariant checks run by `c4 verify`. Each check reports the measured
// residual next to its tolerance; non-gating checks are informational and
// never fail a suite.

#include <cstdint>
#include <string>
#include <vector>

namespace c4 {

struct CheckResult {
  std::string name;
  double value = 0.0;      // residual or statistic that was compared
  double tolerance = 0.0;
  bool pass = false;
  bool gating = true;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;
  bool passed() const;
};

const std::vector<std::string>& suite_names();  // covariance, gmm, theorem1, policy
bool is_suite(const std::string& name);          // also accepts "all"

/// One suite, or every suite for "all".
std::vector<SuiteReport> run_suite(const std::string& name, std::uint64_t seed = 0);
std::string report_json(const std::vector<SuiteReport>& reports);

// Individual checks, shared with the acceptance harness.
namespace checks {

CheckResult total_covariance(std::uint64_t seed);     // 100 labelings, N=50, m=4, K in 1..5
CheckResult within_bound_chain(std::uint64_t seed);   // 100 PSD block matrices
CheckResult svd_alignment(std::uint64_t seed);        // 200 instances
CheckResult svd_alignment_construction(std::uint64_t seed);
CheckResult spectral_norm_vs_svd(std::uint64_t seed);

CheckResult em_monotone(std::uint64_t seed, double ridge = 0.0);  // 50 problems; ridge <= 0: default
CheckResult em_separated_recovery(std::uint64_t seed);

CheckResult theorem1_linear_exact(std::uint64_t seed);
CheckResult theorem1_relu_gap(std::uint64_t seed, int seeds = 10, int replicates = 10000);
CheckResult second_moment_identity(std::uint64_t seed);
CheckResult gradient_split_identity(std::uint64_t seed);

CheckResult kappa_residuals(std::uint64_t seed);       // 1000 random (R, alpha, beta_kl)
CheckResult kappa_kl_closed_form(std::uint64_t seed);
CheckResult kappa_pearson_lambert(std::uint64_t seed);
CheckResult chi2_cap_regime(std::uint64_t seed);       // inputs where the cap is provable
CheckResult chi2_cap_all(std::uint64_t seed);          // the unconditional statement
CheckResult mixture_bound_1d(std::uint64_t seed);      // 100 cases x {kl, chi2, mse}
CheckResult mixture_bound_2d(std::uint64_t seed);
CheckResult cluster_gradient_unbiased(std::uint64_t seed);
CheckResult cql_tabular(std::uint64_t seed);           // 20 MDPs, 5 states, 2 actions

}  // namespace checks

}  // namespace c4
