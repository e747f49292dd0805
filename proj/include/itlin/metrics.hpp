#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "itlin/tensor.hpp"
#include "itlin/train.hpp"

namespace itlin {

// One self-contained JSON object per line, fixed key order:
// step, epoch, phase_index, train_loss, train_acc, test_acc, grad_norm,
// dist_from_anchor, status (+ kernel_drift on refresh lines that measured it).
std::string metric_to_jsonl(const MetricRecord& rec);
std::vector<MetricRecord> read_metrics_jsonl(const std::filesystem::path& path);

// Record cadence: every step for runs up to 10^4 steps, otherwise every 10th
// step plus all refresh steps (and the final step).
inline bool should_log(std::uint64_t step, std::uint64_t total_steps, bool refresh) {
  if (total_steps <= 10000) return true;
  return refresh || step % 10 == 0 || step + 1 == total_steps;
}

// Plot-ready per-run CSV: step,epoch,train_loss,train_acc,test_acc,
// refresh_events,kernel_drift. Missing values stay empty.
void write_curves_csv(const std::vector<MetricRecord>& records, const std::filesystem::path& out_csv);

struct RunCurveRef {
  std::string run_id;
  std::string k;
  double eta = 0.0;
  std::filesystem::path metrics_jsonl;
};

// Long-format merge of several runs: run,k,eta + the per-run columns.
void write_merged_csv(const std::vector<RunCurveRef>& runs, const std::filesystem::path& out_csv);

// Space-separated full-precision matrix dump, one row per line.
void write_matrix_txt(const MatX<double>& m, const std::filesystem::path& path);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace itlin
