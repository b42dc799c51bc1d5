#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace c4 {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

// Bad arguments: dimension mismatches, out-of-range indices, violated preconditions.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Iterative method failed to converge or produced non-finite values.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InputError(what);
}

/// Standard Gaussian matrix drawn from `rng`.
inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = nd(rng);
  return out;
}

/// Uniform direction on the unit sphere S^{dim-1} (normalized Gaussian draw).
inline Vector random_unit_vector(Eigen::Index dim, Rng& rng) {
  Vector v = gaussian_matrix(dim, 1, rng);
  double n = v.norm();
  while (n == 0.0) {
    v = gaussian_matrix(dim, 1, rng);
    n = v.norm();
  }
  return v / n;
}

/// Random symmetric positive semi-definite matrix A^T A with A ~ N(0,1)^{k x dim}.
inline Matrix random_psd(Eigen::Index dim, Eigen::Index rank, Rng& rng) {
  Matrix a = gaussian_matrix(rank, dim, rng);
  return a.transpose() * a;
}

/// Smallest eigenvalue of a symmetric positive definite matrix by inverse power
/// iteration (Rayleigh quotient of the converged iterate).
template <typename Derived>
double min_eigenvalue_inverse_power(const Eigen::MatrixBase<Derived>& a, double tol = 1e-13,
                                    int max_iters = 10000) {
  const Eigen::Index n = a.rows();
  require(n == a.cols() && n > 0, "min_eigenvalue_inverse_power: matrix must be square");
  Eigen::LDLT<Matrix> ldlt(a);
  if (ldlt.info() != Eigen::Success) throw NumericalError("min_eigenvalue_inverse_power: factorization failed");
  Vector v = Vector::Ones(n) / std::sqrt(static_cast<double>(n));
  double prev = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector w = ldlt.solve(v);
    const double nw = w.norm();
    if (!std::isfinite(nw) || nw == 0.0) throw NumericalError("min_eigenvalue_inverse_power: breakdown");
    v = w / nw;
    const double ritz = v.dot(a * v);
    if (it > 0 && std::abs(ritz - prev) <= tol * std::max(1.0, std::abs(ritz))) return ritz;
    prev = ritz;
  }
  return prev;
}

}  // namespace c4
