#include "c4/dataset.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace c4 {

namespace {

Vector project_to_ball(const Vector& v, double radius) {
  const double n = v.norm();
  return n > radius ? Vector(v * (radius / n)) : v;
}

void append_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void append_array(std::string& out, const Vector& v) {
  out += '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    append_number(out, v(i));
  }
  out += ']';
}

Vector vector_field(const nlohmann::json& j, const char* key, int dim, std::size_t line) {
  if (!j.contains(key) || !j[key].is_array()) throw DatasetParseError(line, std::string("missing array '") + key + "'");
  const auto& arr = j[key];
  if (static_cast<int>(arr.size()) != dim)
    throw DatasetFormatError("line " + std::to_string(line) + ": '" + key + "' has " +
                             std::to_string(arr.size()) + " entries, header says " + std::to_string(dim));
  Vector v(dim);
  for (int i = 0; i < dim; ++i) {
    if (!arr[i].is_number()) throw DatasetParseError(line, std::string("non-numeric entry in '") + key + "'");
    v(i) = arr[i].get<double>();
  }
  return v;
}

}  // namespace

OfflineDataset::OfflineDataset(DatasetHeader header, std::vector<Transition> transitions)
    : header_(std::move(header)), transitions_(std::move(transitions)) {
  if (transitions_.empty()) throw DatasetFormatError("dataset must contain at least one transition");
  require(header_.ds > 0 && header_.da > 0, "dataset: dimensions must be positive");
  for (const auto& t : transitions_) {
    if (t.s.size() != header_.ds || t.s_next.size() != header_.ds || t.a.size() != header_.da ||
        t.a_next.size() != header_.da)
      throw DatasetFormatError("dataset: transition dimensions do not match header");
    if (!t.s.allFinite() || !t.a.allFinite() || !std::isfinite(t.r) || !t.s_next.allFinite() ||
        !t.a_next.allFinite())
      throw DatasetFormatError("dataset: non-finite transition entry");
  }
}

EnvSpec EnvSpec::three_mode() {
  EnvSpec spec;
  const double pi = std::acos(-1.0);
  for (int m = 0; m < 3; ++m) {
    const double angle = 2.0 * pi * m / 3.0;
    BehaviorMode mode{Vector(2), Matrix::Identity(2, 2), 1.0};
    mode.mean << 0.8 * std::cos(angle), 0.8 * std::sin(angle);
    spec.modes.push_back(std::move(mode));
  }
  return spec;
}

void EnvSpec::validate() const {
  require(ds >= 1 && da >= 1, "env: dimensions must be positive");
  require(!modes.empty(), "env: need at least one behavior mode");
  require(horizon >= 1, "env: horizon must be >= 1");
  require(box_radius > 0.0 && action_bound > 0.0, "env: bounds must be positive");
  require(noise_scale >= 0.0, "env: noise_scale must be >= 0");
  double total = 0.0;
  for (const auto& m : modes) {
    require(m.mean.size() == da, "env: mode mean dimension mismatch");
    require(m.cov.rows() == da && m.cov.cols() == da, "env: mode covariance dimension mismatch");
    require(m.weight >= 0.0, "env: negative mode weight");
    total += m.weight;
  }
  require(total > 0.0, "env: mode weights sum to zero");
}

Vector EnvSpec::step(const Vector& s, const Vector& a) const {
  return project_to_ball(s + step_size * a, box_radius);
}

double EnvSpec::reward(const Vector& s, const Vector& a) const {
  return -s.squaredNorm() - action_cost * a.squaredNorm();
}

Vector EnvSpec::clip_action(const Vector& a) const { return project_to_ball(a, action_bound); }

OfflineDataset generate(const EnvSpec& spec, int n_trajectories, std::uint64_t seed) {
  spec.validate();
  require(n_trajectories >= 1, "generate: need at least one trajectory");
  Rng rng(seed);
  std::vector<double> weights;
  std::vector<Matrix> factors;
  for (const auto& m : spec.modes) {
    weights.push_back(m.weight);
    Eigen::LLT<Matrix> llt(m.cov);
    // Zero or semidefinite covariances fall back to a symmetric square root.
    if (llt.info() == Eigen::Success) {
      factors.push_back(llt.matrixL());
    } else {
      Eigen::SelfAdjointEigenSolver<Matrix> es(m.cov);
      factors.push_back(es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal());
    }
  }
  std::discrete_distribution<int> pick_mode(weights.begin(), weights.end());
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto draw_action = [&](int mode) {
    Vector eps(spec.da);
    for (int i = 0; i < spec.da; ++i) eps(i) = nd(rng);
    return spec.clip_action(spec.modes[mode].mean + spec.noise_scale * (factors[mode] * eps));
  };

  std::vector<Transition> out;
  out.reserve(static_cast<std::size_t>(n_trajectories) * spec.horizon);
  for (int traj = 0; traj < n_trajectories; ++traj) {
    const int mode = pick_mode(rng);
    Vector dir(spec.ds);
    for (int i = 0; i < spec.ds; ++i) dir(i) = nd(rng);
    const double dn = dir.norm();
    Vector s = dn > 0.0 ? Vector(dir / dn * spec.box_radius * std::pow(unif(rng), 1.0 / spec.ds))
                        : Vector::Zero(spec.ds);
    Vector a = draw_action(mode);
    for (int t = 0; t < spec.horizon; ++t) {
      Transition tr;
      tr.s = s;
      tr.a = a;
      tr.r = spec.reward(s, a);
      tr.s_next = spec.step(s, a);
      tr.a_next = draw_action(mode);
      tr.done = (t == spec.horizon - 1);
      s = tr.s_next;
      a = tr.a_next;
      out.push_back(std::move(tr));
    }
  }
  DatasetHeader header{spec.ds, spec.da, spec.name, static_cast<int>(spec.modes.size()), seed};
  return OfflineDataset(std::move(header), std::move(out));
}

OfflineDataset subsample(const OfflineDataset& ds, std::size_t n, std::uint64_t seed) {
  require(n >= 1 && n <= ds.size(), "subsample: n must lie in [1, |dataset|]");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first n slots are a uniform draw without replacement.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(ds[idx[i]]);
  return OfflineDataset(ds.header(), std::move(out));
}

std::string to_jsonl(const OfflineDataset& ds) {
  const auto& h = ds.header();
  std::string out = nlohmann::json{{"ds", h.ds}, {"da", h.da}, {"env", h.env}, {"modes", h.modes}, {"seed", h.seed}}
                        .dump();
  out += '\n';
  for (const auto& t : ds.transitions()) {
    out += "{\"s\":";
    append_array(out, t.s);
    out += ",\"a\":";
    append_array(out, t.a);
    out += ",\"r\":";
    append_number(out, t.r);
    out += ",\"sn\":";
    append_array(out, t.s_next);
    out += ",\"an\":";
    append_array(out, t.a_next);
    out += t.done ? ",\"done\":true}\n" : ",\"done\":false}\n";
  }
  return out;
}

OfflineDataset dataset_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  DatasetHeader header;
  bool have_header = false;
  std::vector<Transition> body;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetParseError(lineno, e.what());
    }
    if (!j.is_object()) throw DatasetParseError(lineno, "expected a JSON object");
    try {
      if (!have_header) {
        header.ds = j.at("ds").get<int>();
        header.da = j.at("da").get<int>();
        header.env = j.at("env").get<std::string>();
        header.modes = j.at("modes").get<int>();
        header.seed = j.at("seed").get<std::uint64_t>();
        if (header.ds <= 0 || header.da <= 0) throw DatasetFormatError("header: dimensions must be positive");
        have_header = true;
        continue;
      }
      Transition t;
      t.s = vector_field(j, "s", header.ds, lineno);
      t.a = vector_field(j, "a", header.da, lineno);
      t.r = j.at("r").get<double>();
      t.s_next = vector_field(j, "sn", header.ds, lineno);
      t.a_next = vector_field(j, "an", header.da, lineno);
      t.done = j.at("done").get<bool>();
      body.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw DatasetParseError(lineno, e.what());
    }
  }
  if (!have_header) throw DatasetFormatError("dataset file has no header line");
  if (body.empty()) throw DatasetFormatError("dataset file has no transitions");
  return OfflineDataset(std::move(header), std::move(body));
}

void save(const OfflineDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_jsonl(ds);
  if (!out) throw std::runtime_error("write failed: " + path);
}

OfflineDataset load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return dataset_from_jsonl(ss.str());
}

DatasetMatrices to_matrices(const OfflineDataset& ds) {
  const int m = ds.input_dim();
  const int ns = ds.header().ds;
  const auto n = static_cast<Eigen::Index>(ds.size());
  DatasetMatrices out{Matrix(m, n), Matrix(m, n), Vector(n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = ds[static_cast<std::size_t>(i)];
    out.x.col(i).head(ns) = t.s;
    out.x.col(i).tail(m - ns) = t.a;
    out.x_next.col(i).head(ns) = t.s_next;
    out.x_next.col(i).tail(m - ns) = t.a_next;
    out.reward(i) = t.r;
    out.done(i) = t.done ? 1.0 : 0.0;
  }
  return out;
}

TransitionBatch gather(const DatasetMatrices& data, std::span<const int> indices) {
  const auto n = static_cast<Eigen::Index>(indices.size());
  TransitionBatch b{Matrix(data.x.rows(), n), Matrix(data.x.rows(), n), Vector(n), Vector(n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const int i = indices[static_cast<std::size_t>(k)];
    require(i >= 0 && i < data.x.cols(), "gather: index out of range");
    b.x.col(k) = data.x.col(i);
    b.x_next.col(k) = data.x_next.col(i);
    b.reward(k) = data.reward(i);
    b.done(k) = data.done(i);
  }
  return b;
}

TransitionBatch whole(const DatasetMatrices& data) { return {data.x, data.x_next, data.reward, data.done}; }

}  // namespace c4
