#include "c4/gmm.hpp"

#include "c4/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace c4 {

void GaussianMixture::validate() const {
  const auto k = weights.size();
  require(k >= 1, "mixture: need at least one component");
  require(means.size() == k && covariances.size() == k, "mixture: component arrays differ in length");
  double total = 0.0;
  for (std::size_t z = 0; z < k; ++z) {
    require(weights[z] >= 0.0, "mixture: negative weight");
    require(means[z].size() == means[0].size(), "mixture: mean dimension mismatch");
    require(covariances[z].rows() == means[0].size() && covariances[z].cols() == means[0].size(),
            "mixture: covariance dimension mismatch");
    total += weights[z];
  }
  require(std::abs(total - 1.0) < 1e-9, "mixture: weights must sum to 1");
}

EStepResult e_step(const GaussianMixture& mix, const Matrix& y) {
  const int k = mix.components();
  require(k >= 1, "e_step: empty mixture");
  require(y.cols() == mix.dim(), "e_step: dimension mismatch");
  const Eigen::Index n = y.rows();
  const double d = static_cast<double>(y.cols());
  const double log2pi = std::log(2.0 * std::numbers::pi);

  Matrix logp(n, k);
  std::vector<bool> failed(static_cast<std::size_t>(k), false);
  parallel_for(static_cast<std::size_t>(k), [&](std::size_t zi) {
    const auto z = static_cast<Eigen::Index>(zi);
    Eigen::LLT<Matrix> llt(mix.covariances[zi]);
    if (llt.info() != Eigen::Success) {
      failed[zi] = true;
      return;
    }
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    Matrix centered = (y.rowwise() - mix.means[zi].transpose()).transpose();  // d x n
    llt.matrixL().solveInPlace(centered);
    const double log_w = mix.weights[zi] > 0.0 ? std::log(mix.weights[zi]) : -std::numeric_limits<double>::infinity();
    logp.col(z) = (-0.5 * centered.colwise().squaredNorm().array() - 0.5 * (log_det + d * log2pi) + log_w).transpose();
  });
  for (int z = 0; z < k; ++z)
    if (failed[static_cast<std::size_t>(z)])
      throw NumericalError("e_step: covariance of component " + std::to_string(z) + " is not positive definite");

  EStepResult out;
  out.responsibilities.resize(n, k);
  out.point_log_density.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logp.row(i).maxCoeff();
    if (!std::isfinite(mx)) throw NumericalError("e_step: point has zero density under every component");
    const auto shifted = (logp.row(i).array() - mx).exp();
    const double s = shifted.sum();
    out.point_log_density(i) = mx + std::log(s);
    out.responsibilities.row(i) = shifted / s;
    out.responsibilities.row(i) /= out.responsibilities.row(i).sum();
  }
  out.log_likelihood = out.point_log_density.sum();
  return out;
}

double default_ridge(const Matrix& y) {
  const double mean_diag = covariance(y, CovConvention::population).diagonal().mean();
  return std::max(1e-6 * mean_diag, 1e-12);
}

MStepResult m_step(const Matrix& y, const Matrix& responsibilities, double ridge) {
  require(responsibilities.rows() == y.rows(), "m_step: responsibilities row count mismatch");
  require(ridge > 0.0, "m_step: ridge must be positive");
  const Eigen::Index n = y.rows();
  const int k = static_cast<int>(responsibilities.cols());
  const double nd = static_cast<double>(n);

  MStepResult out;
  auto& mix = out.mixture;
  mix.weights.resize(static_cast<std::size_t>(k));
  mix.means.resize(static_cast<std::size_t>(k));
  mix.covariances.resize(static_cast<std::size_t>(k));
  const Vector counts = responsibilities.colwise().sum().transpose();

  std::vector<bool> empty(static_cast<std::size_t>(k));
  for (int z = 0; z < k; ++z) empty[static_cast<std::size_t>(z)] = counts(z) < 1e-6 * nd;

  parallel_for(static_cast<std::size_t>(k), [&](std::size_t zi) {
    const auto z = static_cast<Eigen::Index>(zi);
    if (empty[zi]) return;
    const auto r = responsibilities.col(z);
    Vector mu = (y.transpose() * r) / counts(z);
    Matrix centered = y.rowwise() - mu.transpose();
    const Matrix weighted = centered.array().colwise() * r.array();
    Matrix cov = (centered.transpose() * weighted) / counts(z);
    cov = 0.5 * (cov + cov.transpose());
    cov.diagonal().array() += ridge;
    mix.means[zi] = std::move(mu);
    mix.covariances[zi] = std::move(cov);
  });

  double occupied = 0.0;
  for (int z = 0; z < k; ++z)
    if (!empty[static_cast<std::size_t>(z)]) occupied += counts(z);
  Matrix global_cov;
  Vector global_mean;
  for (int z = 0; z < k; ++z) {
    const auto zi = static_cast<std::size_t>(z);
    if (empty[zi]) {
      if (global_cov.size() == 0) {
        global_mean = y.colwise().mean().transpose();
        global_cov = covariance(y, CovConvention::population);
        global_cov.diagonal().array() += ridge;
      }
      mix.means[zi] = global_mean;
      mix.covariances[zi] = global_cov;
      mix.weights[zi] = 0.0;
      out.empty_components.push_back(z);
    } else {
      mix.weights[zi] = counts(z) / occupied;
    }
  }
  return out;
}

namespace {

GaussianMixture kmeanspp_init(const Matrix& y, int k, double ridge, Rng& rng) {
  const Eigen::Index n = y.rows();
  Matrix global_cov = covariance(y, CovConvention::population);
  global_cov.diagonal().array() += ridge;

  std::vector<Eigen::Index> centers;
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.push_back(first(rng));
  Vector d2 = (y.rowwise() - y.row(centers[0])).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (static_cast<int>(centers.size()) < k) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = first(rng);
    } else {
      const double u = unif(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pick);
    d2 = d2.cwiseMin((y.rowwise() - y.row(pick)).rowwise().squaredNorm());
  }

  GaussianMixture mix;
  for (int z = 0; z < k; ++z) {
    mix.weights.push_back(1.0 / k);
    mix.means.push_back(y.row(centers[static_cast<std::size_t>(z)]).transpose());
    mix.covariances.push_back(global_cov);
  }
  return mix;
}

}  // namespace

FitResult fit(const Matrix& y, const FitOptions& options) {
  const int k = options.components;
  require(k >= 1, "fit: need K >= 1");
  require(y.rows() >= k, "fit: need at least K samples");
  require(y.allFinite(), "fit: non-finite data");
  const double nd = static_cast<double>(y.rows());

  FitResult out;
  out.ridge = options.ridge > 0.0 ? options.ridge : default_ridge(y);
  Rng rng(options.seed);

  GaussianMixture mix;
  if (options.warm_start && options.warm_start->components() == k && options.warm_start->dim() == y.cols()) {
    mix = *options.warm_start;
  } else {
    mix = kmeanspp_init(y, k, out.ridge, rng);
  }

  EStepResult e = e_step(mix, y);
  out.log_likelihood.push_back(e.log_likelihood);
  out.reseeded.push_back(false);
  for (int it = 1; it <= options.max_iters; ++it) {
    MStepResult m = m_step(y, e.responsibilities, out.ridge);
    bool reseed = false;
    if (!m.empty_components.empty()) {
      reseed = true;
      // Re-seed each empty component at the currently worst-explained point.
      Vector density = e.point_log_density;
      Matrix global_cov = covariance(y, CovConvention::population);
      global_cov.diagonal().array() += out.ridge;
      for (int z : m.empty_components) {
        Eigen::Index worst = 0;
        density.minCoeff(&worst);
        m.mixture.means[static_cast<std::size_t>(z)] = y.row(worst).transpose();
        m.mixture.covariances[static_cast<std::size_t>(z)] = global_cov;
        m.mixture.weights[static_cast<std::size_t>(z)] = 1.0 / nd;
        density(worst) = std::numeric_limits<double>::infinity();
      }
      double total = 0.0;
      for (double w : m.mixture.weights) total += w;
      for (double& w : m.mixture.weights) w /= total;
    }
    mix = std::move(m.mixture);
    const double prev = e.log_likelihood;
    e = e_step(mix, y);
    out.log_likelihood.push_back(e.log_likelihood);
    out.reseeded.push_back(reseed);
    out.iterations = it;
    if (!reseed && (e.log_likelihood - prev) / nd < options.tol) break;
  }
  out.mixture = std::move(mix);
  out.responsibilities = std::move(e.responsibilities);
  return out;
}

CovarianceBlocks extract_blocks(const GaussianMixture& mix, int z) {
  require(z >= 0 && z < mix.components(), "extract_blocks: component index out of range");
  const Matrix& omega = mix.covariances[static_cast<std::size_t>(z)];
  require(omega.rows() % 2 == 0, "extract_blocks: covariance dimension must be even");
  const Eigen::Index m = omega.rows() / 2;
  return {omega.topLeftCorner(m, m), omega.topRightCorner(m, m), omega.bottomRightCorner(m, m)};
}

int sample_categorical(std::span<const double> weights, Rng& rng) {
  require(!weights.empty(), "sample_categorical: no weights");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), "sample_categorical: weights must be finite and >= 0");
    total += w;
  }
  require(total > 0.0, "sample_categorical: weights sum to zero");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng) * total;
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

int effective_clusters(const GaussianMixture& mix, double occupancy_threshold) {
  require(occupancy_threshold > 0.0 && occupancy_threshold < 1.0, "effective_clusters: threshold must lie in (0,1)");
  return static_cast<int>(
      std::count_if(mix.weights.begin(), mix.weights.end(), [&](double w) { return w >= occupancy_threshold; }));
}

double occupancy_entropy(const GaussianMixture& mix) {
  double h = 0.0;
  for (double w : mix.weights)
    if (w > 0.0) h -= w * std::log(w);
  return h;
}

std::vector<int> hard_labels(const Matrix& responsibilities) {
  std::vector<int> out(static_cast<std::size_t>(responsibilities.rows()));
  for (Eigen::Index i = 0; i < responsibilities.rows(); ++i) {
    Eigen::Index best = 0;
    responsibilities.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  require(a.size() == b.size() && !a.empty(), "adjusted_rand_index: label vectors must match and be nonempty");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, v] : joint) sum_joint += c2(v);
  for (const auto& [key, v] : ca) sum_a += c2(v);
  for (const auto& [key, v] : cb) sum_b += c2(v);
  const double total = c2(static_cast<double>(a.size()));
  const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

std::string to_json(const GaussianMixture& mix) {
  nlohmann::json doc;
  doc["K"] = mix.components();
  doc["weights"] = mix.weights;
  doc["means"] = nlohmann::json::array();
  doc["covariances"] = nlohmann::json::array();
  for (int z = 0; z < mix.components(); ++z) {
    const auto& mu = mix.means[static_cast<std::size_t>(z)];
    doc["means"].push_back(std::vector<double>(mu.data(), mu.data() + mu.size()));
    const auto& cov = mix.covariances[static_cast<std::size_t>(z)];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(cov.size()));
    for (Eigen::Index i = 0; i < cov.rows(); ++i)
      for (Eigen::Index j = 0; j < cov.cols(); ++j) flat.push_back(cov(i, j));
    doc["covariances"].push_back(std::move(flat));
  }
  return doc.dump();
}

GaussianMixture mixture_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("mixture json: ") + e.what());
  }
  GaussianMixture mix;
  const int k = doc.at("K").get<int>();
  mix.weights = doc.at("weights").get<std::vector<double>>();
  require(static_cast<int>(mix.weights.size()) == k, "mixture json: K does not match weights");
  for (int z = 0; z < k; ++z) {
    const auto mu = doc.at("means").at(static_cast<std::size_t>(z)).get<std::vector<double>>();
    const auto flat = doc.at("covariances").at(static_cast<std::size_t>(z)).get<std::vector<double>>();
    const auto d = static_cast<Eigen::Index>(mu.size());
    require(static_cast<Eigen::Index>(flat.size()) == d * d, "mixture json: covariance size mismatch");
    mix.means.emplace_back(Eigen::Map<const Vector>(mu.data(), d));
    Matrix cov(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) cov(i, j) = flat[static_cast<std::size_t>(i * d + j)];
    mix.covariances.push_back(std::move(cov));
  }
  mix.validate();
  return mix;
}

}  // namespace c4
