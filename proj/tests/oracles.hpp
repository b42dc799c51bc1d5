#pragma once

// Test-only reference computations. Nothing here calls into the library's
// numerical paths; each oracle recomputes its quantity from first principles.

#include "c4/linalg.hpp"
#include "c4/mlp.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace c4::oracle {

/// Straight-line scalar re-implementation of an MLP forward pass.
inline double mlp_value(const MlpCritic& critic, const std::vector<double>& x) {
  std::vector<double> a = x;
  const auto& layers = critic.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weight;
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double acc = layers[l].bias(i);
      for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(i, j) * a[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(i)] = (l + 1 < layers.size()) ? (acc > 0.0 ? acc : 0.0) : acc;
    }
    a = std::move(z);
  }
  return a[0];
}

inline Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|b|_inf, floor)
inline double max_relative_error(const Vector& a, const Vector& b, double floor = 1e-8) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), floor);
}

/// Smallest |pre-activation| over all hidden units at x.
inline double min_abs_preactivation(const MlpCritic& critic, const Vector& x) {
  double best = 1e300;
  Vector a = x;
  const auto& layers = critic.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    Vector z = layers[l].weight * a + layers[l].bias;
    best = std::min(best, z.cwiseAbs().minCoeff());
    a = z.cwiseMax(0.0);
  }
  return best;
}

/// Gaussian density evaluated through an explicit inverse and determinant.
inline double gaussian_density(const Vector& y, const Vector& mu, const Matrix& cov) {
  const double d = static_cast<double>(y.size());
  const Vector diff = y - mu;
  const double q = diff.dot(cov.inverse() * diff);
  return std::exp(-0.5 * q) / std::sqrt(std::pow(2.0 * M_PI, d) * cov.determinant());
}

/// 3-sigma band check for a multinomial frequency.
inline bool within_3_sigma(double count, double trials, double p) {
  const double sd = std::sqrt(trials * p * (1.0 - p));
  return std::abs(count - trials * p) <= 3.0 * sd + 1e-12;
}

}  // namespace c4::oracle
