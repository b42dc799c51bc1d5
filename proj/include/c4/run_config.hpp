#pragma once

// One JSON document per run: environment, data generation, trainer settings,
// diagnostic toggles and where to write artifacts. Unknown keys are errors.

#include "c4/dataset.hpp"
#include "c4/td_train.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace c4 {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  int trajectories = 100;
  std::uint64_t seed = 0;
  int subsample = 0;  // 0 keeps every transition
};

struct DiagnosticsConfig {
  int abc_every = 0;  // 0 disables the periodic A/B/C log
  int abc_directions = 1000;
  int abc_batch = 256;
  bool dataset_trace = true;  // dataset-wide normalized trace in the run summary
};

struct RunConfig {
  EnvSpec env = EnvSpec::three_mode();
  DataConfig data;
  TrainConfig train;
  DiagnosticsConfig diagnostics;
  std::string dataset;           // JSONL path read by train
  std::string output_dir = ".";
};

/// `overrides` are "dotted.key=value"; the value is parsed as JSON when it
/// parses and taken as a string otherwise.
RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

std::string to_json(const RunConfig& cfg);

}  // namespace c4
