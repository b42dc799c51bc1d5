#pragma once

// Perturbation diagnostics for the TD error: first-order A/B/C moments,
// directly perturbed delta variance, gradient cosines of the second-moment
// split, normalized scores and PCA views of gradient pairs.

#include "c4/covstats.hpp"
#include "c4/dataset.hpp"
#include "c4/mlp.hpp"

#include <optional>
#include <vector>

namespace c4 {

/// x is displaced by k * (scale o w), x' by k' * (scale o w'), with w, w'
/// uniform on the unit sphere. `scale` empty means all ones. With `tied` the
/// two sides share one direction per replicate.
struct PerturbSpec {
  double k = 0.0;
  double k_prime = 0.0;
  int n_directions = 10000;  // Monte-Carlo replicates
  Vector scale;
  bool tied = true;

  void validate(Eigen::Index dim) const;
};

/// k = k' = 0.01 and scale = per-dimension standard deviation of the batch inputs.
PerturbSpec default_perturb_spec(const TransitionBatch& batch, int n_directions = 10000);

/// One replicate per column: sample index and its two unit directions.
struct PerturbDraws {
  std::vector<int> sample;
  Matrix w_target;  // dim x R
  Matrix w_online;  // dim x R
};

/// Replicate r uses sample r mod n.
PerturbDraws draw_perturbations(Eigen::Index n_samples, Eigen::Index dim, const PerturbSpec& spec, Rng& rng);

struct AbcEstimate {
  double a = 0.0;  // Var <w', g'>
  double b = 0.0;  // Var <w, g>
  double c = 0.0;  // Cov(<w', g'>, <w, g>)
  double composed = 0.0;  // gamma^2 k'^2 A + k^2 B - 2 gamma k k' C
  int replicates = 0;
};

// Moments are over the joint (sample, direction) randomness with the sample
// convention. Terminal transitions contribute a zero target projection.
AbcEstimate estimate_abc(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                         const PerturbSpec& spec, double gamma, const PerturbDraws& draws);
AbcEstimate estimate_abc(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                         const PerturbSpec& spec, double gamma, Rng& rng);

/// Variance over replicates of delta(x + k s w, x' + k' s w') - delta(x, x'),
/// evaluated through the networks.
double direct_var_delta(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                        const PerturbSpec& spec, double gamma, const PerturbDraws& draws);
double direct_var_delta(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                        const PerturbSpec& spec, double gamma, Rng& rng);

/// gamma^2 g'^T S2 g' + g^T S1 g - 2 gamma g'^T N g
double quadratic_form_variance(const Matrix& s1, const Matrix& s2, const Matrix& n, const Vector& g,
                               const Vector& g_target, double gamma);

/// Parameter-space gradients of E[d^2], (E d)^2 and Var d (population) over a
/// batch. A cosine is nullopt when either gradient has zero norm.
struct GradCosineReport {
  std::optional<double> cos_var;
  std::optional<double> cos_mean_sq;
  double identity_residual = 0.0;  // max |grad E[d^2] - grad (E d)^2 - grad Var d|
  Vector grad_second_moment, grad_mean_sq, grad_var;
};

GradCosineReport grad_cosine_report(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                                    double gamma);

double normalized_score(double score, double random_score, double expert_score);

struct PcaProjection {
  Matrix scores;            // N x dims
  Vector singular_values;   // all of them, descending
  double explained = 0.0;   // captured share of total variance
  double discarded_energy = 0.0;  // sum of squared dropped singular values
};

PcaProjection pca_project(const StackedPairSet& pairs, int dims = 2);

}  // namespace c4
