#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "itlin/runconfig.hpp"

namespace itlin {

struct RunSummary {
  std::string k = "1";
  double eta = 0.0;
  std::string status = "budget-exhausted";
  std::uint64_t refreshes = 0;
  std::uint64_t steps = 0;
  double final_train_loss = 0.0;
  double final_train_acc = -1.0;  // -1 when not applicable (regression)
  double final_test_acc = -1.0;
  double wall_seconds = 0.0;
  std::filesystem::path dir;
};

// Executes one configured run into its run directory (config.snapshot,
// metrics.jsonl, checkpoint.bin, kernel/, summary.csv). Returns the process
// exit code: 0 completed, 2 diverged, 3 config error, 4 data error.
int run_experiment(const RunConfig& cfg, RunSummary* summary = nullptr);

// One run per value of the swept axis (k | eta | seed); each run lands in
// out_root/<axis>-<value>. Diverged runs are recorded, not fatal. jobs > 1
// executes runs as parallel child processes of `self_exe`.
int sweep(const RunConfig& base, const std::string& axis, const std::vector<std::string>& values,
          int jobs, const std::filesystem::path& out_root, const std::filesystem::path& self_exe);

// Plot-ready CSV per run directory plus one merged long-format CSV.
int emit_curves(const std::vector<std::filesystem::path>& run_dirs,
                const std::filesystem::path& merged_out);

RunSummary read_summary_csv(const std::filesystem::path& file);

}  // namespace itlin
