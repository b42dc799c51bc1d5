#pragma once

#include "c4/covstats.hpp"
#include "c4/linalg.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace c4 {

/// K-component Gaussian mixture over R^{2m}. Covariances carry the block
/// layout [[S'_z, C_z], [C_z^T, S_z]] when fitted on stacked gradient pairs.
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;

  int components() const { return static_cast<int>(weights.size()); }
  Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
  void validate() const;
};

struct EStepResult {
  Matrix responsibilities;  // N x K, rows sum to 1
  Vector point_log_density; // log sum_z p_z N(y_i | mu_z, Omega_z)
  double log_likelihood = 0.0;
};

EStepResult e_step(const GaussianMixture& mix, const Matrix& y);
inline EStepResult e_step(const GaussianMixture& mix, const StackedPairSet& pairs) { return e_step(mix, pairs.y); }

struct MStepResult {
  GaussianMixture mixture;
  std::vector<int> empty_components;  // N_z < 1e-6 N; placeholder parameters
};

MStepResult m_step(const Matrix& y, const Matrix& responsibilities, double ridge);

/// Default ridge: 1e-6 times the mean diagonal of the global covariance.
double default_ridge(const Matrix& y);

struct FitOptions {
  int components = 5;
  int max_iters = 100;
  double tol = 1e-8;            // on mean per-sample log-likelihood improvement
  std::uint64_t seed = 0;
  double ridge = 0.0;           // <= 0 selects default_ridge
  std::optional<GaussianMixture> warm_start;
};

struct FitResult {
  GaussianMixture mixture;
  Matrix responsibilities;
  std::vector<double> log_likelihood;  // one entry per E-step
  std::vector<bool> reseeded;          // parallel to log_likelihood; true after an empty-cluster reseed
  double ridge = 0.0;
  int iterations = 0;
};

FitResult fit(const Matrix& y, const FitOptions& options);
inline FitResult fit(const StackedPairSet& pairs, const FitOptions& options) { return fit(pairs.y, options); }

struct CovarianceBlocks {
  Matrix target;  // S'_z, top-left
  Matrix cross;   // C_z, top-right
  Matrix online;  // S_z, bottom-right
};

CovarianceBlocks extract_blocks(const GaussianMixture& mix, int z);

/// Draw an index with probability proportional to weights.
int sample_categorical(std::span<const double> weights, Rng& rng);
inline int sample_cluster(const GaussianMixture& mix, Rng& rng) { return sample_categorical(mix.weights, rng); }

int effective_clusters(const GaussianMixture& mix, double occupancy_threshold);
double occupancy_entropy(const GaussianMixture& mix);

std::vector<int> hard_labels(const Matrix& responsibilities);
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

std::string to_json(const GaussianMixture& mix);
GaussianMixture mixture_from_json(const std::string& text);

}  // namespace c4
