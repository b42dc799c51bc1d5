#pragma once

#include "c4/linalg.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace c4 {

struct Transition {
  Vector s, a;
  double r = 0.0;
  Vector s_next, a_next;
  bool done = false;

  bool operator==(const Transition& o) const {
    return s == o.s && a == o.a && r == o.r && s_next == o.s_next && a_next == o.a_next && done == o.done;
  }
};

struct DatasetHeader {
  int ds = 0;
  int da = 0;
  std::string env;
  int modes = 1;
  std::uint64_t seed = 0;

  bool operator==(const DatasetHeader&) const = default;
};

class OfflineDataset {
 public:
  OfflineDataset(DatasetHeader header, std::vector<Transition> transitions);

  const DatasetHeader& header() const { return header_; }
  const std::vector<Transition>& transitions() const { return transitions_; }
  std::size_t size() const { return transitions_.size(); }
  const Transition& operator[](std::size_t i) const { return transitions_[i]; }
  int input_dim() const { return header_.ds + header_.da; }

  bool operator==(const OfflineDataset& o) const {
    return header_ == o.header_ && transitions_ == o.transitions_;
  }

 private:
  DatasetHeader header_;
  std::vector<Transition> transitions_;
};

struct BehaviorMode {
  Vector mean;  // da
  Matrix cov;   // da x da, scaled by EnvSpec::noise_scale
  double weight = 1.0;
};

/// Point mass in the plane: s' = clip(s + step_size * a), reward
/// -|s|^2 - action_cost * |a|^2. Clipping projects states onto the ball of
/// radius box_radius and actions onto the ball of radius action_bound, so
/// -(box_radius^2 + action_cost * action_bound^2) <= r <= 0.
struct EnvSpec {
  std::string name = "pointmass";
  int ds = 2;
  int da = 2;
  std::vector<BehaviorMode> modes;
  double noise_scale = 0.2;
  double box_radius = 1.0;
  double action_bound = 1.0;
  double step_size = 0.1;
  double action_cost = 0.1;
  int horizon = 20;

  static EnvSpec three_mode();
  void validate() const;
  Vector step(const Vector& s, const Vector& a) const;
  double reward(const Vector& s, const Vector& a) const;
  Vector clip_action(const Vector& a) const;
  double reward_lower_bound() const {
    return -(box_radius * box_radius + action_cost * action_bound * action_bound);
  }
};

OfflineDataset generate(const EnvSpec& spec, int n_trajectories, std::uint64_t seed);
OfflineDataset subsample(const OfflineDataset& ds, std::size_t n, std::uint64_t seed);

/// JSONL with one header line followed by one transition per line.
class DatasetParseError : public std::runtime_error {
 public:
  DatasetParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_jsonl(const OfflineDataset& ds);
OfflineDataset dataset_from_jsonl(const std::string& text);
void save(const OfflineDataset& ds, const std::string& path);
OfflineDataset load(const std::string& path);

/// Dataset columns stacked for batched critic evaluation (columns are samples).
struct DatasetMatrices {
  Matrix x;       // (ds+da) x N
  Matrix x_next;  // (ds+da) x N
  Vector reward;
  Vector done;    // 1.0 for terminal
};
DatasetMatrices to_matrices(const OfflineDataset& ds);

struct TransitionBatch {
  Matrix x, x_next;
  Vector reward, done;
  Eigen::Index size() const { return x.cols(); }
};
TransitionBatch gather(const DatasetMatrices& data, std::span<const int> indices);
TransitionBatch whole(const DatasetMatrices& data);

}  // namespace c4
