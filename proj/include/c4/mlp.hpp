#pragma once

#include "c4/linalg.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace c4 {

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Feedforward ReLU network with a scalar linear head. Hidden layers apply
/// ReLU; the last layer is linear with a single output. A network with one
/// layer and no hidden units is a plain affine map.
class MlpCritic {
 public:
  MlpCritic() = default;
  explicit MlpCritic(std::vector<DenseLayer> layers);

  /// He-style initialization. `arch` = {input_dim, hidden..., 1}.
  static MlpCritic random(std::span<const int> arch, Rng& rng);
  static MlpCritic zeros(std::span<const int> arch);

  int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  /// Width of the last hidden layer (input_dim when there are no hidden layers).
  int feature_dim() const { return static_cast<int>(layers_.back().weight.cols()); }
  int hidden_layer_count() const { return static_cast<int>(layers_.size()) - 1; }
  std::vector<int> arch() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  const DenseLayer& head() const { return layers_.back(); }

  Eigen::Index parameter_count() const;
  Vector parameters() const;
  void set_parameters(const Vector& flat);

  bool same_architecture(const MlpCritic& other) const { return arch() == other.arch(); }

 private:
  std::vector<DenseLayer> layers_;
};

/// Online critic's exponentially averaged twin.
struct TargetCritic {
  MlpCritic network;
  double ema_rate = 0.005;
};

double forward(const MlpCritic& critic, const Vector& x);
Vector input_gradient(const MlpCritic& critic, const Vector& x);
Vector penultimate_features(const MlpCritic& critic, const Vector& x);

// Batched evaluation. Columns of `x` are samples (m x n).
RowVector forward_batch(const MlpCritic& critic, const Matrix& x);
Matrix features_batch(const MlpCritic& critic, const Matrix& x);        // h x n
Matrix input_gradients_batch(const MlpCritic& critic, const Matrix& x);  // m x n

/// Sensitivities a loss reports back to `param_gradient`. `d_features` (h x n)
/// and `d_input_gradients` (m x n) may be left empty when the loss does not
/// depend on them.
struct LossSensitivity {
  double value = 0.0;
  RowVector d_output;
  Matrix d_features;
  Matrix d_input_gradients;
};

/// Everything a batch loss can look at. `input_gradients` is only filled when
/// requested, since it costs an extra reverse pass.
struct BatchOutputs {
  RowVector output;        // 1 x n
  Matrix features;         // h x n
  Matrix input_gradients;  // m x n (empty unless requested)
};

using LossClosure = std::function<LossSensitivity(const BatchOutputs&)>;

struct ValueAndGradient {
  double value = 0.0;
  Vector gradient;  // laid out like MlpCritic::parameters()
};

/// Exact parameter gradient of a scalar loss of the critic's outputs,
/// last-hidden features and (optionally) input gradients on a batch.
/// Dependence through input gradients is differentiated with ReLU masks held
/// fixed, which is exact away from kinks.
ValueAndGradient param_gradient(const MlpCritic& critic, const Matrix& x, const LossClosure& loss,
                                bool needs_input_gradients = false);

/// new_target = rate * online + (1 - rate) * target, parameterwise.
TargetCritic ema_update(const TargetCritic& target, const MlpCritic& online, double rate);

std::string to_json(const MlpCritic& critic);
MlpCritic critic_from_json(const std::string& text);

class Optimizer {
 public:
  enum class Kind { sgd, adam };
  Optimizer(Kind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}
  void step(Vector& params, const Vector& grad);
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  Vector m_, v_;
  long t_ = 0;
};

}  // namespace c4
