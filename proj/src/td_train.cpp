#include "c4/td_train.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace c4 {

const char* to_string(FeatureMode mode) {
  return mode == FeatureMode::surrogate ? "surrogate" : "exact_input_grad";
}

FeatureMode feature_mode_from_string(const std::string& name) {
  if (name == "surrogate") return FeatureMode::surrogate;
  if (name == "exact_input_grad") return FeatureMode::exact_input_grad;
  throw InputError("unknown feature_mode '" + name + "'");
}

void TrainConfig::validate() const {
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  require(lambda >= 0.0, "lambda must be >= 0");
  require(penalty_trace_weight >= 0.0, "penalty_trace_weight must be >= 0");
  require(clusters >= 1, "clusters must be >= 1");
  require(refresh_period >= 1, "refresh_period must be >= 1");
  require(batch_size >= 2, "batch_size must be >= 2");
  require(steps >= 0, "steps must be >= 0");
  require(ema_rate > 0.0 && ema_rate <= 1.0, "ema_rate must lie in (0, 1]");
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(em_iters >= 1, "em_iters must be >= 1");
  require(probe_size >= 0, "probe_size must be >= 0");
  require(eval_every >= 0 && eval_episodes >= 1 && eval_grid >= 1, "bad evaluation settings");
  for (int h : hidden) require(h >= 1, "hidden widths must be >= 1");
}

void write_metrics_header(std::ostream& out) {
  out << "step,td_loss,penalty,objective,tr_n_sample_convention,active_cluster,cluster_occupancy_entropy,"
         "eval_return\n";
}

void write_metrics_row(std::ostream& out, const MetricRecord& rec) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%d,%.17g,", rec.step, rec.td_loss, rec.penalty,
                rec.objective, rec.tr_n, rec.active_cluster, rec.occupancy_entropy);
  out << buf;
  if (!std::isnan(rec.eval_return)) {
    std::snprintf(buf, sizeof buf, "%.17g", rec.eval_return);
    out << buf;
  }
  out << '\n';
}

std::string metrics_csv(std::span<const MetricRecord> log) {
  std::ostringstream out;
  write_metrics_header(out);
  for (const auto& rec : log) write_metrics_row(out, rec);
  return out.str();
}

Vector td_targets(const TransitionBatch& batch, const TargetCritic& target, double gamma) {
  require(batch.size() > 0, "td_targets: empty batch");
  const Vector next = forward_batch(target.network, batch.x_next).transpose();
  return batch.reward.array() + gamma * (1.0 - batch.done.array()) * next.array();
}

double td_loss(const MlpCritic& critic, const TransitionBatch& batch, const Vector& targets) {
  require(batch.size() > 0 && targets.size() == batch.size(), "td_loss: batch/target size mismatch");
  const Vector q = forward_batch(critic, batch.x).transpose();
  return (q - targets).squaredNorm() / static_cast<double>(batch.size());
}

GradientPairs gradient_pairs(const MlpCritic& online, const TargetCritic& target, const TransitionBatch& batch,
                             FeatureMode mode) {
  require(batch.size() > 0, "gradient_pairs: empty batch");
  if (mode == FeatureMode::surrogate)
    return {features_batch(target.network, batch.x_next).transpose(), features_batch(online, batch.x).transpose()};
  return {input_gradients_batch(target.network, batch.x_next).transpose(),
          input_gradients_batch(online, batch.x).transpose()};
}

BatchObjective batch_objective(const MlpCritic& online, const TargetCritic& target, const TransitionBatch& batch,
                               const TrainConfig& cfg, bool with_gradient) {
  const Eigen::Index n = batch.size();
  require(n >= 2, "batch_objective: batch must hold at least 2 samples");
  const double lambda = cfg.effective_lambda();
  const bool exact = cfg.feature_mode == FeatureMode::exact_input_grad;

  BatchObjective out;
  ObjectiveParts& parts = out.parts;
  Vector y;
  if (exact) {
    y = td_targets(batch, target, cfg.gamma);
    parts.pairs.gp = input_gradients_batch(target.network, batch.x_next).transpose();
  } else {
    // One target pass serves both the features and the bootstrapped value.
    const Matrix feat = features_batch(target.network, batch.x_next);
    const auto& head = target.network.head();
    const Vector next = ((head.weight * feat).array() + head.bias(0)).transpose();
    y = batch.reward.array() + cfg.gamma * (1.0 - batch.done.array()) * next.array();
    parts.pairs.gp = feat.transpose();
  }
  const Matrix gp_centered = parts.pairs.gp.rowwise() - parts.pairs.gp.colwise().mean();
  const double denom = static_cast<double>(n - 1);

  // The closure records the online side as a by-product of the forward pass
  // that param_gradient runs anyway.
  auto loss = [&](const BatchOutputs& o) {
    LossSensitivity s;
    const Vector q = o.output.transpose();
    parts.delta = y - q;
    parts.td = parts.delta.squaredNorm() / static_cast<double>(n);
    s.d_output = (-2.0 / static_cast<double>(n)) * parts.delta.transpose();
    parts.pairs.g = exact ? Matrix(o.input_gradients.transpose()) : Matrix(o.features.transpose());
    const Matrix g_centered = parts.pairs.g.rowwise() - parts.pairs.g.colwise().mean();
    parts.cross = gp_centered.transpose() * g_centered / denom;
    parts.penalty = penalty(parts.cross, cfg.penalty_trace_weight);
    parts.total = parts.td + lambda * parts.penalty;
    s.value = parts.total;
    if (with_gradient && lambda > 0.0) {
      // dP/dG = Gp_c dP/dC / (n - 1); centering of G is absorbed because Gp_c
      // has zero column means.
      const Matrix d_g = lambda * gp_centered * penalty_gradient(parts.cross, cfg.penalty_trace_weight) / denom;
      if (exact)
        s.d_input_gradients = d_g.transpose();
      else
        s.d_features = d_g.transpose();
    }
    return s;
  };

  if (with_gradient) {
    const auto vg = param_gradient(online, batch.x, loss, exact);
    out.gradient = vg.gradient;
  } else {
    BatchOutputs o;
    o.output = forward_batch(online, batch.x);
    if (exact)
      o.input_gradients = input_gradients_batch(online, batch.x);
    else
      o.features = features_batch(online, batch.x);
    loss(o);
  }
  return out;
}

std::vector<int> single_cluster_batch(const Matrix& responsibilities, int z, int batch_size, Rng& rng) {
  require(z >= 0 && z < responsibilities.cols(), "single_cluster_batch: cluster index out of range");
  require(batch_size >= 1, "single_cluster_batch: batch_size must be >= 1");
  const Eigen::Index n = responsibilities.rows();
  std::vector<double> cumulative(static_cast<std::size_t>(n));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = responsibilities(i, z);
    require(r >= 0.0 && std::isfinite(r), "single_cluster_batch: responsibilities must be finite and >= 0");
    total += r;
    cumulative[static_cast<std::size_t>(i)] = total;
  }
  if (!(total > 0.0)) return {};
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> out(static_cast<std::size_t>(batch_size));
  for (auto& idx : out) {
    const double u = unif(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    // upper_bound lands on the first row whose mass covers u, so zero-mass
    // rows are never returned.
    if (it == cumulative.end()) --it;
    idx = static_cast<int>(it - cumulative.begin());
  }
  return out;
}

std::vector<int> uniform_batch(int n, int batch_size, Rng& rng) {
  require(n >= 1 && batch_size >= 1, "uniform_batch: need n >= 1 and batch_size >= 1");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> out(static_cast<std::size_t>(batch_size));
  for (auto& idx : out) idx = std::min(n - 1, static_cast<int>(unif(rng) * static_cast<double>(n)));
  return out;
}

namespace {

Rng stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return Rng(seq);
}

std::vector<int> critic_arch(int input_dim, const std::vector<int>& hidden) {
  std::vector<int> arch{input_dim};
  arch.insert(arch.end(), hidden.begin(), hidden.end());
  arch.push_back(1);
  return arch;
}

}  // namespace

TrainerState init_state(const DatasetMatrices& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<int>(data.x.cols());
  require(n >= 1, "train: empty dataset");
  TrainerState st;
  Rng init_rng = stream(cfg.seed, 0);
  const auto arch = critic_arch(static_cast<int>(data.x.rows()), cfg.hidden);
  st.online = MlpCritic::random(arch, init_rng);
  st.target = {st.online, cfg.ema_rate};
  st.cluster_rng = stream(cfg.seed, 1);
  st.batch_rng = stream(cfg.seed, 2);
  st.optimizer = Optimizer(cfg.optimizer, cfg.learning_rate);

  if (cfg.probe_size == 0 || cfg.probe_size >= n) {
    st.probe.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) st.probe[static_cast<std::size_t>(i)] = i;
  } else {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    Rng probe_rng = stream(cfg.seed, 3);
    for (int i = 0; i < cfg.probe_size; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(probe_rng))]);
    }
    st.probe.assign(all.begin(), all.begin() + cfg.probe_size);
    std::sort(st.probe.begin(), st.probe.end());
  }
  return st;
}

StackedPairSet stacked_pairs(const MlpCritic& online, const TargetCritic& target, const DatasetMatrices& data,
                             std::span<const int> rows, FeatureMode mode) {
  const TransitionBatch b = gather(data, rows);
  const GradientPairs p = gradient_pairs(online, target, b, mode);
  return StackedPairSet::from_pairs(p.gp, p.g);
}

void refresh_clusters(TrainerState& st, const DatasetMatrices& data, const TrainConfig& cfg) {
  const auto n = static_cast<int>(data.x.cols());
  const StackedPairSet probe = stacked_pairs(st.online, st.target, data, st.probe, cfg.feature_mode);

  FitOptions opt;
  opt.components = cfg.clusters;
  opt.max_iters = cfg.em_iters;
  opt.tol = cfg.em_tol;
  opt.seed = cfg.seed * 1000003ull + static_cast<std::uint64_t>(st.refreshes);
  opt.ridge = cfg.ridge;
  if (cfg.warm_start && st.mixture.components() == cfg.clusters && st.mixture.dim() == probe.y.cols())
    opt.warm_start = st.mixture;
  FitResult res = fit(probe, opt);

  st.mixture = std::move(res.mixture);
  if (static_cast<int>(st.probe.size()) == n) {
    st.responsibilities = std::move(res.responsibilities);
  } else {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    st.responsibilities = e_step(st.mixture, stacked_pairs(st.online, st.target, data, all, cfg.feature_mode))
                              .responsibilities;
  }
  ++st.refreshes;
}

void train_step(TrainerState& st, const DatasetMatrices& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  const auto n = static_cast<int>(data.x.cols());
  int z = -1;
  std::vector<int> idx;
  if (cfg.baseline_mode) {
    idx = uniform_batch(n, cfg.batch_size, st.batch_rng);
  } else {
    while (idx.empty()) {
      z = sample_cluster(st.mixture, st.cluster_rng);
      idx = single_cluster_batch(st.responsibilities, z, cfg.batch_size, st.batch_rng);
      if (idx.empty()) ++st.zero_mass_redraws;
    }
  }
  const TransitionBatch batch = gather(data, idx);
  const BatchObjective obj = batch_objective(st.online, st.target, batch, cfg, true);

  Vector params = st.online.parameters();
  st.optimizer.step(params, obj.gradient);
  st.online.set_parameters(params);
  st.target = ema_update(st.target, st.online, cfg.ema_rate);
  ++st.step;

  MetricRecord rec;
  rec.step = st.step;
  rec.td_loss = obj.parts.td;
  rec.penalty = obj.parts.penalty;
  rec.objective = obj.parts.total;
  rec.tr_n = normalized_trace(obj.parts.cross, obj.parts.cross.rows());
  rec.active_cluster = z;
  rec.occupancy_entropy = cfg.baseline_mode ? 0.0 : occupancy_entropy(st.mixture);
  st.metrics.push_back(rec);

  if (hooks.on_step) hooks.on_step(StepView{st.step, z, idx, batch, obj.parts, st});
}

TrainResult train(const OfflineDataset& dataset, const TrainConfig& cfg, const EnvSpec* env,
                  const TrainHooks& hooks) {
  const DatasetMatrices data = to_matrices(dataset);
  TrainerState st = init_state(data, cfg);
  auto refresh = [&] {
    refresh_clusters(st, data, cfg);
    if (hooks.on_refresh) hooks.on_refresh(st);
  };
  if (!cfg.baseline_mode) refresh();
  for (int s = 0; s < cfg.steps; ++s) {
    train_step(st, data, cfg, hooks);
    const bool last = st.step == cfg.steps;
    if (env && ((cfg.eval_every > 0 && st.step % cfg.eval_every == 0) || last))
      st.metrics.back().eval_return =
          greedy_return(st.online, *env, cfg.eval_episodes, cfg.eval_grid, cfg.eval_seed);
    if (!cfg.baseline_mode && st.step % cfg.refresh_period == 0) refresh();
  }
  return {st.online, st.target, st.mixture, std::move(st.metrics), st.refreshes, st.zero_mass_redraws};
}

namespace {

Matrix action_lattice(const EnvSpec& env, int grid) {
  const int da = env.da;
  std::vector<Vector> pts;
  long total = 1;
  for (int d = 0; d < da; ++d) total *= grid;
  for (long code = 0; code < total; ++code) {
    Vector a(da);
    long c = code;
    for (int d = 0; d < da; ++d) {
      const int k = static_cast<int>(c % grid);
      c /= grid;
      a(d) = grid == 1 ? 0.0 : env.action_bound * (-1.0 + 2.0 * k / (grid - 1));
    }
    if (a.norm() <= env.action_bound * (1.0 + 1e-12)) pts.push_back(a);
  }
  Matrix out(da, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = pts[i];
  return out;
}

}  // namespace

double greedy_return(const MlpCritic& critic, const EnvSpec& env, int episodes, int grid, std::uint64_t seed) {
  require(episodes >= 1 && grid >= 1, "greedy_return: need episodes >= 1 and grid >= 1");
  require(critic.input_dim() == env.ds + env.da, "greedy_return: critic does not match the environment");
  const Matrix actions = action_lattice(env, grid);
  const Eigen::Index na = actions.cols();
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix x(env.ds + env.da, na);
  x.bottomRows(env.da) = actions;
  double total = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    Vector dir(env.ds);
    for (int i = 0; i < env.ds; ++i) dir(i) = nd(rng);
    Vector s = dir.normalized() * env.box_radius * std::pow(unif(rng), 1.0 / env.ds);
    for (int t = 0; t < env.horizon; ++t) {
      x.topRows(env.ds) = s.replicate(1, na);
      Eigen::Index best = 0;
      forward_batch(critic, x).maxCoeff(&best);
      const Vector a = actions.col(best);
      total += env.reward(s, a);
      s = env.step(s, a);
    }
  }
  return total / episodes;
}

double dataset_normalized_trace(const MlpCritic& online, const TargetCritic& target, const DatasetMatrices& data,
                                FeatureMode mode) {
  const GradientPairs p = gradient_pairs(online, target, whole(data), mode);
  const Matrix c = cross_cov(p.gp, p.g, CovConvention::sample).value;
  return normalized_trace(c, c.rows());
}

}  // namespace c4
