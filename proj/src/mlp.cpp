#include "c4/mlp.hpp"

#include <json.hpp>

#include <cmath>

namespace c4 {

namespace {

struct ForwardCache {
  std::vector<Matrix> activations;  // a_0 = x, a_l for hidden l
  std::vector<Matrix> masks;        // 1 where (hidden) pre-activation > 0
  RowVector output;
};

ForwardCache run_forward(const MlpCritic& critic, const Matrix& x) {
  require(x.rows() == critic.input_dim(), "critic: input dimension mismatch");
  const auto& layers = critic.layers();
  ForwardCache cache;
  cache.activations.reserve(layers.size());
  cache.masks.reserve(layers.size() - 1);
  cache.activations.push_back(x);
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    Matrix z = (layers[l].weight * cache.activations.back()).colwise() + layers[l].bias;
    cache.masks.push_back((z.array() > 0.0).cast<double>().matrix());
    cache.activations.push_back(z.cwiseMax(0.0));
  }
  const auto& head = layers.back();
  cache.output = (head.weight * cache.activations.back()).array() + head.bias(0);
  return cache;
}

// Reverse pass of the scalar output with d_out = 1 for every column.
Matrix input_gradients_from_cache(const MlpCritic& critic, const ForwardCache& cache) {
  const auto& layers = critic.layers();
  const Eigen::Index n = cache.activations.front().cols();
  Matrix adj = layers.back().weight.transpose().replicate(1, n);
  for (std::size_t l = layers.size() - 1; l-- > 0;) {
    Matrix e = adj.cwiseProduct(cache.masks[l]);
    adj = layers[l].weight.transpose() * e;
  }
  return adj;
}

void check_finite_layers(const std::vector<DenseLayer>& layers) {
  for (const auto& layer : layers)
    require(layer.weight.allFinite() && layer.bias.allFinite(), "critic: non-finite parameter");
}

}  // namespace

MlpCritic::MlpCritic(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), "critic: needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    require(layers_[l].weight.rows() == layers_[l].bias.size(), "critic: bias size mismatch");
    require(layers_[l].weight.cols() > 0 && layers_[l].weight.rows() > 0, "critic: empty layer");
    if (l > 0)
      require(layers_[l].weight.cols() == layers_[l - 1].weight.rows(), "critic: layer dims do not chain");
  }
  require(layers_.back().weight.rows() == 1, "critic: output head must be scalar");
  check_finite_layers(layers_);
}

MlpCritic MlpCritic::random(std::span<const int> arch, Rng& rng) {
  require(arch.size() >= 2 && arch.back() == 1, "critic: arch must end in 1");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(arch[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer{Matrix(arch[l + 1], arch[l]), Vector(arch[l + 1])};
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = u(rng);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = u(rng);
    layers.push_back(std::move(layer));
  }
  return MlpCritic(std::move(layers));
}

MlpCritic MlpCritic::zeros(std::span<const int> arch) {
  require(arch.size() >= 2 && arch.back() == 1, "critic: arch must end in 1");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l)
    layers.push_back({Matrix::Zero(arch[l + 1], arch[l]), Vector::Zero(arch[l + 1])});
  return MlpCritic(std::move(layers));
}

std::vector<int> MlpCritic::arch() const {
  std::vector<int> out;
  if (layers_.empty()) return out;
  out.push_back(input_dim());
  for (const auto& layer : layers_) out.push_back(static_cast<int>(layer.weight.rows()));
  return out;
}

Eigen::Index MlpCritic::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

Vector MlpCritic::parameters() const {
  Vector flat(parameter_count());
  Eigen::Index off = 0;
  for (const auto& layer : layers_) {
    flat.segment(off, layer.weight.size()) = layer.weight.reshaped();
    off += layer.weight.size();
    flat.segment(off, layer.bias.size()) = layer.bias;
    off += layer.bias.size();
  }
  return flat;
}

void MlpCritic::set_parameters(const Vector& flat) {
  require(flat.size() == parameter_count(), "critic: parameter vector size mismatch");
  Eigen::Index off = 0;
  for (auto& layer : layers_) {
    layer.weight.reshaped() = flat.segment(off, layer.weight.size());
    off += layer.weight.size();
    layer.bias = flat.segment(off, layer.bias.size());
    off += layer.bias.size();
  }
}

double forward(const MlpCritic& critic, const Vector& x) { return forward_batch(critic, x)(0); }

Vector input_gradient(const MlpCritic& critic, const Vector& x) {
  return input_gradients_batch(critic, x).col(0);
}

Vector penultimate_features(const MlpCritic& critic, const Vector& x) {
  return features_batch(critic, x).col(0);
}

RowVector forward_batch(const MlpCritic& critic, const Matrix& x) { return run_forward(critic, x).output; }

Matrix features_batch(const MlpCritic& critic, const Matrix& x) {
  return std::move(run_forward(critic, x).activations.back());
}

Matrix input_gradients_batch(const MlpCritic& critic, const Matrix& x) {
  return input_gradients_from_cache(critic, run_forward(critic, x));
}

ValueAndGradient param_gradient(const MlpCritic& critic, const Matrix& x, const LossClosure& loss,
                                bool needs_input_gradients) {
  const ForwardCache cache = run_forward(critic, x);
  const auto& layers = critic.layers();
  const Eigen::Index n = x.cols();
  const std::size_t L = layers.size();

  BatchOutputs outputs{cache.output, cache.activations.back(), Matrix()};
  if (needs_input_gradients) outputs.input_gradients = input_gradients_from_cache(critic, cache);
  const LossSensitivity sens = loss(outputs);
  require(sens.d_output.size() == n, "param_gradient: d_output size mismatch");

  std::vector<DenseLayer> grads(L);
  for (std::size_t l = 0; l < L; ++l)
    grads[l] = {Matrix::Zero(layers[l].weight.rows(), layers[l].weight.cols()),
                Vector::Zero(layers[l].bias.size())};

  // Through outputs and features.
  grads[L - 1].weight = sens.d_output * cache.activations[L - 1].transpose();
  grads[L - 1].bias(0) = sens.d_output.sum();
  Matrix adj = layers[L - 1].weight.transpose() * sens.d_output;
  if (sens.d_features.size() > 0) {
    require(sens.d_features.rows() == adj.rows() && sens.d_features.cols() == n,
            "param_gradient: d_features shape mismatch");
    adj += sens.d_features;
  }
  for (std::size_t l = L - 1; l-- > 0;) {
    Matrix e = adj.cwiseProduct(cache.masks[l]);
    grads[l].weight = e * cache.activations[l].transpose();
    grads[l].bias = e.rowwise().sum();
    adj = layers[l].weight.transpose() * e;
  }

  // Through input gradients: sum_i u_i^T grad_x Q(x_i) is, with masks held
  // fixed, a bias-free linear network applied to u_i. Push the tangents
  // forward, then reverse through the same masked maps.
  if (sens.d_input_gradients.size() > 0) {
    require(sens.d_input_gradients.rows() == x.rows() && sens.d_input_gradients.cols() == n,
            "param_gradient: d_input_gradients shape mismatch");
    std::vector<Matrix> tangents;
    tangents.reserve(L);
    tangents.push_back(sens.d_input_gradients);
    for (std::size_t l = 0; l + 1 < L; ++l)
      tangents.push_back((layers[l].weight * tangents.back()).cwiseProduct(cache.masks[l]));
    grads[L - 1].weight += tangents[L - 1].rowwise().sum().transpose();
    Matrix a = layers[L - 1].weight.transpose().replicate(1, n);
    for (std::size_t l = L - 1; l-- > 0;) {
      Matrix e = a.cwiseProduct(cache.masks[l]);
      grads[l].weight += e * tangents[l].transpose();
      a = layers[l].weight.transpose() * e;
    }
  }

  ValueAndGradient out;
  out.value = sens.value;
  out.gradient.resize(critic.parameter_count());
  Eigen::Index off = 0;
  for (const auto& g : grads) {
    out.gradient.segment(off, g.weight.size()) = g.weight.reshaped();
    off += g.weight.size();
    out.gradient.segment(off, g.bias.size()) = g.bias;
    off += g.bias.size();
  }
  return out;
}

TargetCritic ema_update(const TargetCritic& target, const MlpCritic& online, double rate) {
  require(rate > 0.0 && rate <= 1.0, "ema_update: rate must lie in (0, 1]");
  require(target.network.same_architecture(online), "ema_update: architecture mismatch");
  TargetCritic out = target;
  if (rate == 1.0) {
    out.network = online;
    return out;
  }
  out.network.set_parameters(rate * online.parameters() + (1.0 - rate) * target.network.parameters());
  return out;
}

std::string to_json(const MlpCritic& critic) {
  nlohmann::json doc;
  doc["arch"] = critic.arch();
  doc["layers"] = nlohmann::json::array();
  for (const auto& layer : critic.layers()) {
    std::vector<double> w;
    w.reserve(layer.weight.size());
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) w.push_back(layer.weight(i, j));
    std::vector<double> b(layer.bias.data(), layer.bias.data() + layer.bias.size());
    doc["layers"].push_back({{"w", w}, {"b", b}});
  }
  return doc.dump();
}

MlpCritic critic_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("critic json: ") + e.what());
  }
  const auto arch = doc.at("arch").get<std::vector<int>>();
  const auto& jl = doc.at("layers");
  require(arch.size() == jl.size() + 1, "critic json: arch/layers length mismatch");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < jl.size(); ++l) {
    const auto w = jl[l].at("w").get<std::vector<double>>();
    const auto b = jl[l].at("b").get<std::vector<double>>();
    const int rows = arch[l + 1], cols = arch[l];
    require(w.size() == static_cast<std::size_t>(rows) * cols, "critic json: weight size mismatch");
    require(b.size() == static_cast<std::size_t>(rows), "critic json: bias size mismatch");
    DenseLayer layer{Matrix(rows, cols), Vector(rows)};
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) layer.weight(i, j) = w[static_cast<std::size_t>(i) * cols + j];
    for (int i = 0; i < rows; ++i) layer.bias(i) = b[i];
    layers.push_back(std::move(layer));
  }
  return MlpCritic(std::move(layers));
}

void Optimizer::step(Vector& params, const Vector& grad) {
  require(params.size() == grad.size(), "optimizer: gradient size mismatch");
  if (kind_ == Kind::sgd) {
    params -= lr_ * grad;
    return;
  }
  if (m_.size() != params.size()) {
    m_ = Vector::Zero(params.size());
    v_ = Vector::Zero(params.size());
    t_ = 0;
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

}  // namespace c4
