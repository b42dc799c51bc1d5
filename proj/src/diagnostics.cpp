#include "c4/diagnostics.hpp"

#include "c4/td_train.hpp"

#include <cmath>

namespace c4 {

namespace {

double sample_cov(const Vector& a, const Vector& b) {
  const double n = static_cast<double>(a.size());
  return (a.array() - a.mean()).matrix().dot((b.array() - b.mean()).matrix()) / (n - 1.0);
}

Vector scale_or_ones(const PerturbSpec& spec, Eigen::Index dim) {
  return spec.scale.size() == 0 ? Vector::Ones(dim) : spec.scale;
}

void check_draws(const PerturbDraws& d, const TransitionBatch& batch) {
  const auto r = static_cast<Eigen::Index>(d.sample.size());
  require(r >= 2, "perturbation draws: need at least two replicates");
  require(d.w_target.cols() == r && d.w_online.cols() == r, "perturbation draws: direction count mismatch");
  require(d.w_online.rows() == batch.x.rows() && d.w_target.rows() == batch.x_next.rows(),
          "perturbation draws: direction dimension mismatch");
  for (int i : d.sample) require(i >= 0 && i < batch.size(), "perturbation draws: sample index out of range");
}

std::optional<double> cosine(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return a.dot(b) / (na * nb);
}

}  // namespace

void PerturbSpec::validate(Eigen::Index dim) const {
  require(k >= 0.0 && k_prime >= 0.0, "PerturbSpec: k and k' must be >= 0");
  require(n_directions >= 2, "PerturbSpec: n_directions must be >= 2");
  require(scale.size() == 0 || scale.size() == dim, "PerturbSpec: scale has the wrong dimension");
  require(scale.size() == 0 || (scale.array() >= 0.0).all(), "PerturbSpec: scale must be >= 0");
}

PerturbSpec default_perturb_spec(const TransitionBatch& batch, int n_directions) {
  require(batch.size() >= 2, "default_perturb_spec: batch needs >= 2 samples");
  PerturbSpec spec;
  spec.k = spec.k_prime = 0.01;
  spec.n_directions = n_directions;
  const Matrix centered = batch.x.colwise() - batch.x.rowwise().mean();
  spec.scale = (centered.rowwise().squaredNorm() / static_cast<double>(batch.size() - 1)).cwiseSqrt();
  return spec;
}

PerturbDraws draw_perturbations(Eigen::Index n_samples, Eigen::Index dim, const PerturbSpec& spec, Rng& rng) {
  require(n_samples >= 1 && dim >= 1, "draw_perturbations: empty batch");
  spec.validate(dim);
  PerturbDraws d;
  d.sample.resize(spec.n_directions);
  d.w_online.resize(dim, spec.n_directions);
  d.w_target.resize(dim, spec.n_directions);
  for (int r = 0; r < spec.n_directions; ++r) {
    d.sample[r] = static_cast<int>(r % n_samples);
    d.w_online.col(r) = random_unit_vector(dim, rng);
    d.w_target.col(r) = spec.tied ? Vector(d.w_online.col(r)) : random_unit_vector(dim, rng);
  }
  return d;
}

AbcEstimate estimate_abc(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                         const PerturbSpec& spec, double gamma, const PerturbDraws& draws) {
  require(batch.size() >= 2, "estimate_abc: batch needs >= 2 samples");
  spec.validate(batch.x.rows());
  check_draws(draws, batch);
  const Vector s = scale_or_ones(spec, batch.x.rows());
  const Matrix g = s.asDiagonal() * input_gradients_batch(critic, batch.x);
  const Matrix gp = s.asDiagonal() * input_gradients_batch(target.network, batch.x_next);

  const auto reps = static_cast<Eigen::Index>(draws.sample.size());
  Vector a(reps), b(reps);
  for (Eigen::Index r = 0; r < reps; ++r) {
    const int i = draws.sample[r];
    a(r) = (1.0 - batch.done(i)) * draws.w_target.col(r).dot(gp.col(i));
    b(r) = draws.w_online.col(r).dot(g.col(i));
  }
  AbcEstimate est;
  est.a = sample_cov(a, a);
  est.b = sample_cov(b, b);
  est.c = sample_cov(a, b);
  est.composed = gamma * gamma * spec.k_prime * spec.k_prime * est.a + spec.k * spec.k * est.b -
                 2.0 * gamma * spec.k * spec.k_prime * est.c;
  est.replicates = static_cast<int>(reps);
  return est;
}

AbcEstimate estimate_abc(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                         const PerturbSpec& spec, double gamma, Rng& rng) {
  return estimate_abc(critic, target, batch, spec, gamma,
                      draw_perturbations(batch.size(), batch.x.rows(), spec, rng));
}

double direct_var_delta(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                        const PerturbSpec& spec, double gamma, const PerturbDraws& draws) {
  require(batch.size() >= 1, "direct_var_delta: empty batch");
  spec.validate(batch.x.rows());
  check_draws(draws, batch);
  const Vector s = scale_or_ones(spec, batch.x.rows());
  const auto reps = static_cast<Eigen::Index>(draws.sample.size());

  Matrix x(batch.x.rows(), reps), xp(batch.x_next.rows(), reps);
  Vector keep(reps);
  for (Eigen::Index r = 0; r < reps; ++r) {
    x.col(r) = batch.x.col(draws.sample[r]);
    xp.col(r) = batch.x_next.col(draws.sample[r]);
    keep(r) = 1.0 - batch.done(draws.sample[r]);
  }
  const Matrix x_shift = x + spec.k * (s.asDiagonal() * draws.w_online);
  const Matrix xp_shift = xp + spec.k_prime * (s.asDiagonal() * draws.w_target);

  // The reward and the unperturbed values cancel in the per-sample difference.
  const RowVector q_diff = forward_batch(critic, x_shift) - forward_batch(critic, x);
  const RowVector qp_diff = forward_batch(target.network, xp_shift) - forward_batch(target.network, xp);
  const Vector d = gamma * keep.array() * qp_diff.transpose().array() - q_diff.transpose().array();
  return sample_cov(d, d);
}

double direct_var_delta(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                        const PerturbSpec& spec, double gamma, Rng& rng) {
  return direct_var_delta(critic, target, batch, spec, gamma,
                          draw_perturbations(batch.size(), batch.x.rows(), spec, rng));
}

double quadratic_form_variance(const Matrix& s1, const Matrix& s2, const Matrix& n, const Vector& g,
                               const Vector& g_target, double gamma) {
  const auto m = g.size();
  require(g_target.size() == m, "quadratic_form_variance: gradient sizes differ");
  require(s1.rows() == m && s1.cols() == m && s2.rows() == m && s2.cols() == m && n.rows() == m && n.cols() == m,
          "quadratic_form_variance: block dimensions do not match the gradients");
  return gamma * gamma * g_target.dot(s2 * g_target) + g.dot(s1 * g) - 2.0 * gamma * g_target.dot(n * g);
}

GradCosineReport grad_cosine_report(const MlpCritic& critic, const TargetCritic& target, const TransitionBatch& batch,
                                    double gamma) {
  require(batch.size() >= 2, "grad_cosine_report: batch needs >= 2 samples");
  const Vector y = td_targets(batch, target, gamma);
  const double n = static_cast<double>(batch.size());

  // dQ_i/dtheta enters each delta with a minus sign.
  auto grad_of = [&](auto weights_from_delta) {
    return param_gradient(critic, batch.x, [&](const BatchOutputs& out) {
             const Vector delta = y - out.output.transpose();
             LossSensitivity s;
             s.d_output = -weights_from_delta(delta).transpose();
             return s;
           }).gradient;
  };

  GradCosineReport rep;
  rep.grad_second_moment = grad_of([&](const Vector& d) -> Vector { return 2.0 * d / n; });
  rep.grad_mean_sq = grad_of([&](const Vector& d) -> Vector { return Vector::Constant(d.size(), 2.0 * d.mean() / n); });
  rep.grad_var = grad_of([&](const Vector& d) -> Vector { return 2.0 * (d.array() - d.mean()).matrix() / n; });
  rep.identity_residual = (rep.grad_second_moment - rep.grad_mean_sq - rep.grad_var).cwiseAbs().maxCoeff();
  rep.cos_var = cosine(rep.grad_second_moment, rep.grad_var);
  rep.cos_mean_sq = cosine(rep.grad_second_moment, rep.grad_mean_sq);
  return rep;
}

double normalized_score(double score, double random_score, double expert_score) {
  require(expert_score != random_score, "normalized_score: expert and random references coincide");
  return 100.0 * (score - random_score) / (expert_score - random_score);
}

PcaProjection pca_project(const StackedPairSet& pairs, int dims) {
  require(pairs.size() >= 2, "pca_project: need at least two rows");
  require(dims >= 1 && dims <= pairs.y.cols(), "pca_project: dims out of range");
  const Matrix centered = pairs.y.rowwise() - pairs.y.colwise().mean();
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  PcaProjection p;
  p.singular_values = svd.singularValues();
  const auto kept = std::min<Eigen::Index>(dims, p.singular_values.size());
  p.scores = Matrix::Zero(pairs.size(), dims);
  p.scores.leftCols(kept) = centered * svd.matrixV().leftCols(kept);
  const double total = p.singular_values.squaredNorm();
  const double top = p.singular_values.head(kept).squaredNorm();
  p.explained = total > 0.0 ? top / total : 0.0;
  p.discarded_energy = total - top;
  return p;
}

}  // namespace c4
