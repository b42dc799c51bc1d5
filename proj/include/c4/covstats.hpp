#pragma once

// Covariance and cross-covariance estimators, the Frobenius/trace penalty,
// the law-of-total-covariance split and the spectral bound chain used to
// control the TD cross term inside a cluster.

#include "c4/linalg.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace c4 {

enum class CovConvention { population, sample };

inline const char* to_string(CovConvention c) { return c == CovConvention::population ? "population" : "sample"; }

struct CrossCovEstimate {
  Matrix value;
  Eigen::Index n = 0;
  CovConvention convention = CovConvention::sample;
};

/// Rows of `gp` (g') and `g` are paired samples. Returns the centered
/// cross-covariance (1/c) sum_i (g'_i - mean g')(g_i - mean g)^T with c = n or n-1.
template <typename D1, typename D2>
CrossCovEstimate cross_cov(const Eigen::MatrixBase<D1>& gp, const Eigen::MatrixBase<D2>& g, CovConvention conv) {
  require(gp.rows() == g.rows(), "cross_cov: sample counts differ");
  const Eigen::Index n = gp.rows();
  require(conv == CovConvention::population ? n >= 1 : n >= 2, "cross_cov: too few samples for convention");
  const Matrix gpc = gp.rowwise() - gp.colwise().mean();
  const Matrix gc = g.rowwise() - g.colwise().mean();
  const double c = conv == CovConvention::population ? static_cast<double>(n) : static_cast<double>(n - 1);
  return {gpc.transpose() * gc / c, n, conv};
}

template <typename D>
Matrix covariance(const Eigen::MatrixBase<D>& g, CovConvention conv) {
  return cross_cov(g, g, conv).value;
}

/// ||C||_F^2 + trace_weight * (tr C)^2
template <typename D>
double penalty(const Eigen::MatrixBase<D>& c, double trace_weight) {
  require(c.rows() == c.cols(), "penalty: matrix must be square");
  require(trace_weight >= 0.0, "penalty: trace weight must be >= 0");
  const double tr = c.trace();
  return c.squaredNorm() + trace_weight * tr * tr;
}

/// d penalty / dC
template <typename D>
Matrix penalty_gradient(const Eigen::MatrixBase<D>& c, double trace_weight) {
  Matrix out = 2.0 * c;
  out.diagonal().array() += 2.0 * trace_weight * c.trace();
  return out;
}

template <typename D>
double normalized_trace(const Eigen::MatrixBase<D>& c, Eigen::Index m) {
  require(c.rows() == c.cols() && c.rows() == m, "normalized_trace: expected an m x m matrix");
  return c.trace() / static_cast<double>(m);
}

/// Rows are stacked pairs y_i = [g'_i ; g_i] (N x 2m).
struct StackedPairSet {
  Matrix y;
  Eigen::Index m = 0;

  StackedPairSet() = default;
  StackedPairSet(Matrix stacked, Eigen::Index per_side) : y(std::move(stacked)), m(per_side) {
    require(y.cols() == 2 * m, "StackedPairSet: column count must be 2m");
    require(y.allFinite(), "StackedPairSet: non-finite entries");
  }
  template <typename D1, typename D2>
  static StackedPairSet from_pairs(const Eigen::MatrixBase<D1>& gp, const Eigen::MatrixBase<D2>& g) {
    require(gp.rows() == g.rows() && gp.cols() == g.cols(), "StackedPairSet: g' and g shapes differ");
    Matrix y(gp.rows(), 2 * gp.cols());
    y << gp, g;
    return StackedPairSet(std::move(y), gp.cols());
  }
  Eigen::Index size() const { return y.rows(); }
  auto target_side() const { return y.leftCols(m); }
  auto online_side() const { return y.rightCols(m); }
};

struct TotalCovDecomposition {
  Matrix total;                // Cov(g', g)
  Matrix within_expectation;   // E_Z[C_Z]
  Matrix between;              // Cov(mu'_Z, mu_Z)

  double residual() const { return (total - within_expectation - between).norm(); }
};

/// Population convention throughout; cluster weights are empirical frequencies.
TotalCovDecomposition total_cov_decomposition(const StackedPairSet& pairs, std::span<const int> labels);

/// Largest singular value by power iteration on M^T M.
double spectral_norm(const Matrix& m, double tol = 1e-10, int max_iters = 10000);

struct BoundChain {
  double lhs = 0.0;  // |w'^T C w|
  double mid = 0.0;  // ||C||_2
  double rhs = 0.0;  // sqrt(tr S') sqrt(tr S)
  bool holds(double slack) const { return lhs <= mid + slack && mid <= rhs + slack; }
};

/// The 2*gamma*k*k' factor is common to all three terms and is omitted.
BoundChain within_bound_check(const Matrix& sigma_target, const Matrix& sigma_online, const Matrix& cross,
                              const Vector& w_target, const Vector& w_online);

struct AlignmentBound {
  double value = 0.0;
  double lower_bound = 0.0;
};

/// value = w'^T C w; lower_bound = s1 cos(t') cos(t) - s2 sin(t') sin(t) with
/// t' the angle between w' and u1, t the angle between w and v1.
AlignmentBound svd_alignment_bound(const Matrix& c, const Vector& w_target, const Vector& w_online);

std::string to_csv(const Matrix& m);

}  // namespace c4
