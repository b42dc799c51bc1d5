#include "c4/covstats.hpp"

#include <cstdio>
#include <map>

namespace c4 {

TotalCovDecomposition total_cov_decomposition(const StackedPairSet& pairs, std::span<const int> labels) {
  const Eigen::Index n = pairs.size();
  const Eigen::Index m = pairs.m;
  require(static_cast<Eigen::Index>(labels.size()) == n, "total_cov_decomposition: one label per row required");
  require(n >= 1, "total_cov_decomposition: empty pair set");

  std::map<int, std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < n; ++i) members[labels[static_cast<std::size_t>(i)]].push_back(i);
  for (const auto& [label, rows] : members)
    require(!rows.empty(), "total_cov_decomposition: empty cluster");

  TotalCovDecomposition out;
  out.total = cross_cov(pairs.target_side(), pairs.online_side(), CovConvention::population).value;
  out.within_expectation = Matrix::Zero(m, m);

  const Vector mean_t = pairs.target_side().colwise().mean().transpose();
  const Vector mean_o = pairs.online_side().colwise().mean().transpose();
  out.between = Matrix::Zero(m, m);
  for (const auto& [label, rows] : members) {
    Matrix yz(static_cast<Eigen::Index>(rows.size()), 2 * m);
    for (std::size_t k = 0; k < rows.size(); ++k) yz.row(static_cast<Eigen::Index>(k)) = pairs.y.row(rows[k]);
    const double pz = static_cast<double>(rows.size()) / static_cast<double>(n);
    out.within_expectation +=
        pz * cross_cov(yz.leftCols(m), yz.rightCols(m), CovConvention::population).value;
    const Vector mu_t = yz.leftCols(m).colwise().mean().transpose() - mean_t;
    const Vector mu_o = yz.rightCols(m).colwise().mean().transpose() - mean_o;
    out.between += pz * mu_t * mu_o.transpose();
  }
  return out;
}

double spectral_norm(const Matrix& m, double tol, int max_iters) {
  require(m.allFinite(), "spectral_norm: non-finite matrix");
  if (m.size() == 0) return 0.0;
  const Matrix gram = m.transpose() * m;
  // Start from the column of largest norm; avoids starting orthogonal to v1
  // for the structured inputs we see in practice.
  Eigen::Index best = 0;
  gram.diagonal().maxCoeff(&best);
  if (gram(best, best) == 0.0) return 0.0;
  Vector v = gram.col(best);
  v += Vector::Constant(v.size(), 1e-3 * v.norm() / std::sqrt(static_cast<double>(v.size())));
  v.normalize();
  double lambda = 0.0;
  for (int it = 1; it <= max_iters; ++it) {
    Vector w = gram * v;
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / nw;
    if (std::abs(next - lambda) <= tol * std::max(next, 1e-300)) {
      // Rayleigh quotient of the normalized iterate.
      return std::sqrt(std::max(0.0, v.dot(gram * v)));
    }
    lambda = next;
  }
  throw NumericalError("spectral_norm: no convergence after " + std::to_string(max_iters) + " iterations");
}

BoundChain within_bound_check(const Matrix& sigma_target, const Matrix& sigma_online, const Matrix& cross,
                              const Vector& w_target, const Vector& w_online) {
  const auto m = cross.rows();
  require(cross.cols() == m && sigma_target.rows() == m && sigma_target.cols() == m && sigma_online.rows() == m &&
              sigma_online.cols() == m,
          "within_bound_check: block dimensions mismatch");
  require(w_target.size() == m && w_online.size() == m, "within_bound_check: direction dimension mismatch");
  require(std::abs(w_target.norm() - 1.0) < 1e-9 && std::abs(w_online.norm() - 1.0) < 1e-9,
          "within_bound_check: directions must be unit vectors");
  BoundChain out;
  out.lhs = std::abs(w_target.dot(cross * w_online));
  out.mid = spectral_norm(cross);
  out.rhs = std::sqrt(std::max(0.0, sigma_target.trace())) * std::sqrt(std::max(0.0, sigma_online.trace()));
  return out;
}

AlignmentBound svd_alignment_bound(const Matrix& c, const Vector& w_target, const Vector& w_online) {
  require(c.rows() == w_target.size() && c.cols() == w_online.size(), "svd_alignment_bound: dimension mismatch");
  require(std::abs(w_target.norm() - 1.0) < 1e-9 && std::abs(w_online.norm() - 1.0) < 1e-9,
          "svd_alignment_bound: directions must be unit vectors");
  Eigen::JacobiSVD<Matrix> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return {0.0, 0.0};
  const double s1 = s(0);
  const double s2 = s.size() > 1 ? s(1) : 0.0;
  const double cos_t = std::clamp(svd.matrixU().col(0).dot(w_target), -1.0, 1.0);
  const double cos_o = std::clamp(svd.matrixV().col(0).dot(w_online), -1.0, 1.0);
  const double sin_t = std::sqrt(1.0 - cos_t * cos_t);
  const double sin_o = std::sqrt(1.0 - cos_o * cos_o);
  return {w_target.dot(c * w_online), s1 * cos_t * cos_o - s2 * sin_t * sin_o};
}

std::string to_csv(const Matrix& m) {
  std::string out;
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace c4
