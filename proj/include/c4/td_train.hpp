#pragma once

// Single-cluster offline TD training: EM-fitted mixture over stacked gradient
// pairs, per-step cluster draw, responsibility-weighted batches and a
// within-batch cross-covariance penalty. baseline_mode turns all of that off
// and trains plain TD on uniform batches.

#include "c4/covstats.hpp"
#include "c4/dataset.hpp"
#include "c4/gmm.hpp"
#include "c4/mlp.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace c4 {

enum class FeatureMode { surrogate, exact_input_grad };

const char* to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& name);

struct TrainConfig {
  double gamma = 0.99;
  double lambda = 0.3;
  double penalty_trace_weight = 0.0;
  int clusters = 5;
  int refresh_period = 200;
  int batch_size = 256;
  int steps = 20000;
  double ema_rate = 0.005;
  double learning_rate = 3e-4;
  Optimizer::Kind optimizer = Optimizer::Kind::sgd;
  double ridge = 0.0;  // <= 0: default_ridge of the pair set
  std::uint64_t seed = 0;
  FeatureMode feature_mode = FeatureMode::surrogate;
  bool baseline_mode = false;
  std::vector<int> hidden = {32, 32};

  int em_iters = 5;        // per refresh; warm starts make later refits short
  double em_tol = 1e-6;
  bool warm_start = true;
  int probe_size = 0;      // 0: the whole dataset

  int eval_every = 0;      // 0: evaluate only after the last step
  int eval_episodes = 10;
  int eval_grid = 11;      // per action dimension
  std::uint64_t eval_seed = 12345;

  void validate() const;
  double effective_lambda() const { return baseline_mode ? 0.0 : lambda; }
};

struct MetricRecord {
  long step = 0;  // updates completed after this record
  double td_loss = 0.0;
  double penalty = 0.0;
  double objective = 0.0;
  double tr_n = 0.0;  // normalized trace of the batch cross-covariance, sample convention
  int active_cluster = -1;
  double occupancy_entropy = 0.0;
  double eval_return = std::numeric_limits<double>::quiet_NaN();
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricRecord& rec);
std::string metrics_csv(std::span<const MetricRecord> log);

/// y_i = r_i + gamma (1 - done_i) Q'(x'_i), x' carrying the logged next action.
Vector td_targets(const TransitionBatch& batch, const TargetCritic& target, double gamma);

/// Mean of (Q(x_i) - y_i)^2.
double td_loss(const MlpCritic& critic, const TransitionBatch& batch, const Vector& targets);

struct GradientPairs {
  Matrix gp;  // n x m, target critic at x'
  Matrix g;   // n x m, online critic at x
};

GradientPairs gradient_pairs(const MlpCritic& online, const TargetCritic& target, const TransitionBatch& batch,
                             FeatureMode mode);

struct ObjectiveParts {
  double td = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  Vector delta;  // r + gamma (1 - done) Q' - Q
  GradientPairs pairs;
  Matrix cross;  // sample-convention cross-covariance of the pairs
};

struct BatchObjective {
  ObjectiveParts parts;
  Vector gradient;  // d total / d online parameters; empty when not requested
};

/// td + lambda * penalty(cross_cov(G', G), trace_weight). The penalty gradient
/// reaches the online critic through G only.
BatchObjective batch_objective(const MlpCritic& online, const TargetCritic& target, const TransitionBatch& batch,
                               const TrainConfig& cfg, bool with_gradient = true);

/// batch_size draws with replacement, P(i) proportional to r(i, z). Returns an
/// empty list when column z carries no mass.
std::vector<int> single_cluster_batch(const Matrix& responsibilities, int z, int batch_size, Rng& rng);

/// Uniform draws from [0, n), consuming the generator exactly like
/// single_cluster_batch does on a column of ones.
std::vector<int> uniform_batch(int n, int batch_size, Rng& rng);

struct TrainerState {
  MlpCritic online;
  TargetCritic target;
  GaussianMixture mixture;
  Matrix responsibilities;  // N x K
  long step = 0;
  int refreshes = 0;
  long zero_mass_redraws = 0;
  Rng cluster_rng, batch_rng;
  Optimizer optimizer{Optimizer::Kind::sgd, 3e-4};
  std::vector<int> probe;  // dataset rows the mixture is fitted on
  std::vector<MetricRecord> metrics;
};

TrainerState init_state(const DatasetMatrices& data, const TrainConfig& cfg);

/// Stacked pairs for the given dataset rows under the current critics.
StackedPairSet stacked_pairs(const MlpCritic& online, const TargetCritic& target, const DatasetMatrices& data,
                             std::span<const int> rows, FeatureMode mode);

/// Refit the mixture on the probe pool and recompute responsibilities over
/// the whole dataset.
void refresh_clusters(TrainerState& state, const DatasetMatrices& data, const TrainConfig& cfg);

struct StepView {
  long step;
  int cluster;  // -1 in baseline mode
  std::span<const int> indices;
  const TransitionBatch& batch;
  const ObjectiveParts& parts;
  const TrainerState& state;
};

struct TrainHooks {
  std::function<void(const StepView&)> on_step;
  std::function<void(const TrainerState&)> on_refresh;
};

/// One update: cluster draw, batch, objective, optimizer step, EMA.
void train_step(TrainerState& state, const DatasetMatrices& data, const TrainConfig& cfg, const TrainHooks& hooks);

struct TrainResult {
  MlpCritic critic;
  TargetCritic target;
  GaussianMixture mixture;
  std::vector<MetricRecord> metrics;
  int refreshes = 0;
  long zero_mass_redraws = 0;
};

/// Full loop. `env` enables greedy-rollout evaluation in the metrics log.
TrainResult train(const OfflineDataset& dataset, const TrainConfig& cfg, const EnvSpec* env = nullptr,
                  const TrainHooks& hooks = {});

/// Mean undiscounted return of the greedy policy argmax_a Q(s, a) over a
/// lattice of actions in the action ball, from seeded start states.
double greedy_return(const MlpCritic& critic, const EnvSpec& env, int episodes, int grid, std::uint64_t seed);

/// normalized_trace of the sample cross-covariance over the whole dataset.
double dataset_normalized_trace(const MlpCritic& online, const TargetCritic& target, const DatasetMatrices& data,
                                FeatureMode mode);

}  // namespace c4
