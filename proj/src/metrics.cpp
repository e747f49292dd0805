#include "itlin/metrics.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace itlin {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double v) {
  return ordered_json(v).dump();
}

std::string metric_to_jsonl(const MetricRecord& rec) {
  ordered_json j;
  j["step"] = rec.step;
  j["epoch"] = rec.epoch;
  j["phase_index"] = rec.phase_index;
  j["train_loss"] = rec.train_loss;
  if (rec.train_acc)
    j["train_acc"] = *rec.train_acc;
  else
    j["train_acc"] = nullptr;
  if (rec.test_acc)
    j["test_acc"] = *rec.test_acc;
  else
    j["test_acc"] = nullptr;
  j["grad_norm"] = rec.grad_norm;
  j["dist_from_anchor"] = rec.dist_from_anchor;
  j["status"] = rec.status;
  if (rec.refresh && rec.kernel_drift) j["kernel_drift"] = *rec.kernel_drift;
  return j.dump();
}

std::vector<MetricRecord> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("metrics: cannot open " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  std::uint64_t prev_phase = 0;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const ordered_json j = ordered_json::parse(line);
    MetricRecord r;
    r.step = j.at("step").get<std::uint64_t>();
    r.epoch = j.at("epoch").get<std::uint64_t>();
    r.phase_index = j.at("phase_index").get<std::uint64_t>();
    r.train_loss = j.at("train_loss").get<double>();
    if (!j.at("train_acc").is_null()) r.train_acc = j.at("train_acc").get<double>();
    if (!j.at("test_acc").is_null()) r.test_acc = j.at("test_acc").get<double>();
    r.grad_norm = j.at("grad_norm").get<double>();
    r.dist_from_anchor = j.at("dist_from_anchor").get<double>();
    r.status = j.at("status").get<std::string>();
    if (j.contains("kernel_drift")) r.kernel_drift = j.at("kernel_drift").get<double>();
    // Refresh events are recoverable from the phase index: it advances only
    // when an anchor was created right before the step.
    r.refresh = (first && r.step == 0) || (!first && r.phase_index > prev_phase);
    prev_phase = r.phase_index;
    first = false;
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

void write_curve_rows(std::ofstream& os, const std::vector<MetricRecord>& records,
                      const std::string& row_prefix) {
  for (const MetricRecord& r : records) {
    os << row_prefix << r.step << ',' << r.epoch << ',' << format_double(r.train_loss) << ',';
    if (r.train_acc) os << format_double(*r.train_acc);
    os << ',';
    if (r.test_acc) os << format_double(*r.test_acc);
    os << ',' << (r.refresh ? 1 : 0) << ',';
    if (r.kernel_drift) os << format_double(*r.kernel_drift);
    os << '\n';
  }
}

}  // namespace

void write_curves_csv(const std::vector<MetricRecord>& records, const std::filesystem::path& out_csv) {
  std::ofstream os(out_csv);
  if (!os) throw std::runtime_error("curves: cannot write " + out_csv.string());
  os << "step,epoch,train_loss,train_acc,test_acc,refresh_events,kernel_drift\n";
  write_curve_rows(os, records, "");
  if (!os) throw std::runtime_error("curves: write failed on " + out_csv.string());
}

void write_merged_csv(const std::vector<RunCurveRef>& runs, const std::filesystem::path& out_csv) {
  std::ofstream os(out_csv);
  if (!os) throw std::runtime_error("curves: cannot write " + out_csv.string());
  os << "run,k,eta,step,epoch,train_loss,train_acc,test_acc,refresh_events,kernel_drift\n";
  for (const RunCurveRef& ref : runs) {
    const std::vector<MetricRecord> records = read_metrics_jsonl(ref.metrics_jsonl);
    const std::string prefix = ref.run_id + "," + ref.k + "," + format_double(ref.eta) + ",";
    write_curve_rows(os, records, prefix);
  }
  if (!os) throw std::runtime_error("curves: write failed on " + out_csv.string());
}

void write_matrix_txt(const MatX<double>& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("matrix dump: cannot write " + path.string());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

}  // namespace itlin
