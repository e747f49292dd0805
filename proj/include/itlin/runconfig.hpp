#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "itlin/tensor.hpp"

namespace itlin {

// Exit codes of the experiment runner.
enum ExitCode : int { exit_ok = 0, exit_diverged = 2, exit_config_error = 3, exit_data_error = 4 };

struct DatasetSection {
  std::string kind = "synthetic";  // mnist | cifar10 | synthetic
  std::string root;                // data directory for file-backed datasets
  Index subset_train = 0;          // 0 = use everything
  Index subset_test = 0;
  std::uint64_t subset_seed = 0;
  // synthetic datasets
  std::string synthetic = "linear-teacher";
  Index n = 256;
  Index n_test = 0;
  Index dim = 16;
  std::uint64_t seed = 1;
  double cond = 1.0;
  double noise = 0.0;
  double separation = 6.0;
  Index classes = 2;
};

struct ModelSection {
  std::string arch = "lenet";  // lenet | mlp
  Index conv_channels = 50;
  Index kernel_size = 5;
  std::string pooling = "max";
  std::vector<Index> dense_widths = {500};
  std::string activation = "relu";
  std::string init = "fan_in_normal";
  std::uint64_t seed = 0;
  // mlp
  std::vector<Index> hidden = {16, 16};
  bool bias = true;
};

struct TrainSection {
  double eta = 1e-2;
  std::string k = "1";  // positive integer or "inf"
  std::string loss = "mse";
  std::uint64_t steps = 0;   // exactly one of steps/epochs must be set
  std::uint64_t epochs = 0;
  Index batch_size = 0;  // 0 = full batch
  bool shuffle = true;
  std::uint64_t seed = 0;
  std::string precision = "double";  // double | single
  std::optional<double> target_loss;
  std::uint64_t eval_every = 0;
  Index eval_train_cap = 2048;
};

struct KernelSection {
  Index probe = 0;
  std::uint64_t drift_every = 1;
  bool dump = false;  // also dump kernel matrices as plain text
};

struct RunConfig {
  DatasetSection dataset;
  ModelSection model;
  TrainSection train;
  KernelSection kernel;
  std::string out = "runs/run";
  bool deterministic = true;
};

// CLI flag overrides; applied on top of the config file.
struct FlagOverrides {
  std::optional<std::string> dataset;
  std::optional<std::string> k;
  std::optional<double> lr;
  std::optional<std::string> loss;
  std::optional<std::uint64_t> epochs;
  std::optional<Index> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<Index> subset;
  std::optional<Index> probe;
  std::optional<std::string> out;
  std::optional<bool> deterministic;
};

// Parses the JSON config file; structural problems (unreadable file, bad
// JSON, unknown keys, wrong types) are appended to `errors`.
RunConfig load_run_config(const std::filesystem::path& path, std::vector<std::string>& errors);

void apply_overrides(RunConfig& cfg, const FlagOverrides& flags);

// Semantic validation; returns the full list of problems (empty = valid).
std::vector<std::string> validate_run_config(const RunConfig& cfg);

// Fully-resolved snapshot (defaults filled in) for the run directory.
std::string run_config_snapshot(const RunConfig& cfg);

// Round-trips a snapshot back into a config (snapshots are themselves valid
// config files).
RunConfig parse_run_config_json(const std::string& text, std::vector<std::string>& errors);

}  // namespace itlin
