#include "c4/run_config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace c4 {

using nlohmann::json;

namespace {

// Reads known keys out of one JSON object and complains about the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where() + "bad value for '" + key + "'");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + (path_.empty() ? k : path_ + "." + k) + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : "config." + path_ + ": "; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Vector vec_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + ": expected numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Matrix mat_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + ": expected a nonempty array of rows");
  const Vector first = vec_from(j[0], what);
  Matrix m(static_cast<Eigen::Index>(j.size()), first.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector row = vec_from(j[i], what);
    if (row.size() != m.cols()) throw ConfigError(what + ": ragged rows");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

void read_env(const json& j, EnvSpec& env) {
  Section s(j, "env");
  std::string preset;
  s.get("preset", preset);
  if (!preset.empty()) {
    if (preset != "three_mode") throw ConfigError("config.env: unknown preset '" + preset + "'");
    env = EnvSpec::three_mode();
  }
  s.get("name", env.name);
  s.get("ds", env.ds);
  s.get("da", env.da);
  s.get("noise_scale", env.noise_scale);
  s.get("box_radius", env.box_radius);
  s.get("action_bound", env.action_bound);
  s.get("step_size", env.step_size);
  s.get("action_cost", env.action_cost);
  s.get("horizon", env.horizon);
  if (const json* modes = s.child("modes")) {
    if (!modes->is_array()) throw ConfigError("config.env.modes: expected an array");
    env.modes.clear();
    for (std::size_t i = 0; i < modes->size(); ++i) {
      const std::string what = "config.env.modes[" + std::to_string(i) + "]";
      Section m((*modes)[i], "env.modes[" + std::to_string(i) + "]");
      BehaviorMode mode;
      if (const json* mean = m.child("mean")) mode.mean = vec_from(*mean, what + ".mean");
      if (const json* cov = m.child("cov")) mode.cov = mat_from(*cov, what + ".cov");
      else mode.cov = Matrix::Identity(mode.mean.size(), mode.mean.size());
      m.get("weight", mode.weight);
      m.finish();
      env.modes.push_back(std::move(mode));
    }
  }
  s.finish();
}

void read_train(const json& j, TrainConfig& t) {
  Section s(j, "train");
  s.get("gamma", t.gamma);
  s.get("lambda", t.lambda);
  s.get("penalty_trace_weight", t.penalty_trace_weight);
  s.get("clusters", t.clusters);
  s.get("refresh_period", t.refresh_period);
  s.get("batch_size", t.batch_size);
  s.get("steps", t.steps);
  s.get("ema_rate", t.ema_rate);
  s.get("learning_rate", t.learning_rate);
  std::string opt = t.optimizer == Optimizer::Kind::adam ? "adam" : "sgd";
  s.get("optimizer", opt);
  if (opt == "sgd") t.optimizer = Optimizer::Kind::sgd;
  else if (opt == "adam") t.optimizer = Optimizer::Kind::adam;
  else throw ConfigError("config.train: optimizer must be 'sgd' or 'adam'");
  s.get("ridge", t.ridge);
  s.get("seed", t.seed);
  std::string mode = to_string(t.feature_mode);
  s.get("feature_mode", mode);
  try {
    t.feature_mode = feature_mode_from_string(mode);
  } catch (const InputError& e) {
    throw ConfigError(std::string("config.train: ") + e.what());
  }
  s.get("baseline_mode", t.baseline_mode);
  s.get("hidden", t.hidden);
  s.get("em_iters", t.em_iters);
  s.get("em_tol", t.em_tol);
  s.get("warm_start", t.warm_start);
  s.get("probe_size", t.probe_size);
  s.get("eval_every", t.eval_every);
  s.get("eval_episodes", t.eval_episodes);
  s.get("eval_grid", t.eval_grid);
  s.get("eval_seed", t.eval_seed);
  s.finish();
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) throw ConfigError("--set " + key + ": '" + path[i] + "' is not an object");
    node = &(*node)[path[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("--set " + key + ": parent is not an object");
  (*node)[path.back()] = value;
}

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = text.empty() ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);

  RunConfig cfg;
  Section top(doc, "");
  top.get("dataset", cfg.dataset);
  top.get("output_dir", cfg.output_dir);
  if (const json* env = top.child("env")) read_env(*env, cfg.env);
  if (const json* data = top.child("data")) {
    Section s(*data, "data");
    s.get("trajectories", cfg.data.trajectories);
    s.get("seed", cfg.data.seed);
    s.get("subsample", cfg.data.subsample);
    s.finish();
  }
  if (const json* train = top.child("train")) read_train(*train, cfg.train);
  if (const json* diag = top.child("diagnostics")) {
    Section s(*diag, "diagnostics");
    s.get("abc_every", cfg.diagnostics.abc_every);
    s.get("abc_directions", cfg.diagnostics.abc_directions);
    s.get("abc_batch", cfg.diagnostics.abc_batch);
    s.get("dataset_trace", cfg.diagnostics.dataset_trace);
    s.finish();
  }
  top.finish();

  try {
    cfg.env.validate();
    cfg.train.validate();
  } catch (const InputError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  if (cfg.data.trajectories < 1) throw ConfigError("invalid config: data.trajectories must be >= 1");
  if (cfg.data.subsample < 0) throw ConfigError("invalid config: data.subsample must be >= 0");
  if (cfg.diagnostics.abc_every < 0 || cfg.diagnostics.abc_directions < 2 || cfg.diagnostics.abc_batch < 2)
    throw ConfigError("invalid config: bad diagnostics settings");
  return cfg;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

std::string to_json(const RunConfig& cfg) {
  json modes = json::array();
  for (const auto& m : cfg.env.modes) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.cov.rows(); ++i) rows.push_back(vec_json(m.cov.row(i).transpose()));
    modes.push_back({{"mean", vec_json(m.mean)}, {"cov", rows}, {"weight", m.weight}});
  }
  const auto& e = cfg.env;
  const auto& t = cfg.train;
  json doc = {
      {"dataset", cfg.dataset},
      {"output_dir", cfg.output_dir},
      {"env",
       {{"name", e.name}, {"ds", e.ds}, {"da", e.da}, {"noise_scale", e.noise_scale}, {"box_radius", e.box_radius},
        {"action_bound", e.action_bound}, {"step_size", e.step_size}, {"action_cost", e.action_cost},
        {"horizon", e.horizon}, {"modes", modes}}},
      {"data", {{"trajectories", cfg.data.trajectories}, {"seed", cfg.data.seed}, {"subsample", cfg.data.subsample}}},
      {"train",
       {{"gamma", t.gamma}, {"lambda", t.lambda}, {"penalty_trace_weight", t.penalty_trace_weight},
        {"clusters", t.clusters}, {"refresh_period", t.refresh_period}, {"batch_size", t.batch_size},
        {"steps", t.steps}, {"ema_rate", t.ema_rate}, {"learning_rate", t.learning_rate},
        {"optimizer", t.optimizer == Optimizer::Kind::adam ? "adam" : "sgd"}, {"ridge", t.ridge}, {"seed", t.seed},
        {"feature_mode", to_string(t.feature_mode)}, {"baseline_mode", t.baseline_mode}, {"hidden", t.hidden},
        {"em_iters", t.em_iters}, {"em_tol", t.em_tol}, {"warm_start", t.warm_start},
        {"probe_size", t.probe_size}, {"eval_every", t.eval_every}, {"eval_episodes", t.eval_episodes},
        {"eval_grid", t.eval_grid}, {"eval_seed", t.eval_seed}}},
      {"diagnostics",
       {{"abc_every", cfg.diagnostics.abc_every}, {"abc_directions", cfg.diagnostics.abc_directions},
        {"abc_batch", cfg.diagnostics.abc_batch}, {"dataset_trace", cfg.diagnostics.dataset_trace}}},
  };
  return doc.dump(2) + "\n";
}

}  // namespace c4
