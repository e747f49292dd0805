#include "itlin/runner.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "itlin/checkpoint.hpp"
#include "itlin/data.hpp"
#include "itlin/metrics.hpp"
#include "itlin/model.hpp"
#include "itlin/train.hpp"

#include "json.hpp"

namespace itlin {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string dataset_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("ITLIN_DATA_ROOT"); env && *env) return env;
  return cfg.dataset.root;
}

template <class S>
struct LoadedData {
  Dataset<S> train;
  Dataset<S> test;  // may be empty (n()==0)
};

template <class S>
LoadedData<S> load_data(const RunConfig& cfg) {
  const DatasetSection& d = cfg.dataset;
  LoadedData<S> out;
  if (d.kind == "mnist") {
    auto [train, test] = load_mnist<S>(dataset_root(cfg));
    out.train = std::move(train);
    out.test = std::move(test);
  } else if (d.kind == "cifar10") {
    auto [train, test] = load_cifar10<S>(dataset_root(cfg));
    out.train = std::move(train);
    out.test = std::move(test);
  } else {
    SyntheticOptions opts;
    opts.cond = d.cond;
    opts.noise = d.noise;
    opts.separation = d.separation;
    opts.classes = d.classes;
    const SyntheticKind kind = parse_synthetic_kind(d.synthetic);
    // Train and test come from one generated pool so latent structure (e.g.
    // the teacher weights) is shared.
    Dataset<S> all = synthetic<S>(kind, d.n + d.n_test, d.dim, d.seed, opts);
    if (d.n_test > 0) {
      std::vector<Index> head(static_cast<std::size_t>(d.n));
      std::iota(head.begin(), head.end(), Index(0));
      std::vector<Index> tail(static_cast<std::size_t>(d.n_test));
      std::iota(tail.begin(), tail.end(), d.n);
      out.test = take_rows(all, tail);
      out.test.split = "test";
      out.train = take_rows(all, head);
    } else {
      out.train = std::move(all);
    }
  }
  if (d.subset_train > 0 && d.subset_train < out.train.n())
    out.train = stratified_subset(out.train, d.subset_train, d.subset_seed);
  if (d.subset_test > 0 && out.test.n() > 0 && d.subset_test < out.test.n())
    out.test = stratified_subset(out.test, d.subset_test, d.subset_seed + 1);
  return out;
}

template <class S>
DiffGraph build_model(const RunConfig& cfg, const Dataset<S>& train, std::vector<std::string>& errors) {
  const ModelSection& m = cfg.model;
  const Shape ex = train.example_shape();
  const Index outputs = train.classes > 0 ? train.classes : train.targets.shape[1];
  if (m.arch == "lenet") {
    if (ex.size() != 3) {
      errors.push_back("model.arch lenet needs (C,H,W) image data, dataset examples are " + shape_str(ex));
      return DiffGraph{};
    }
    ModelConfig mc;
    mc.conv_channels = m.conv_channels;
    mc.kernel_size = m.kernel_size;
    mc.pooling = m.pooling == "avg" ? PoolKind::avg : PoolKind::max;
    mc.dense_widths = m.dense_widths;
    mc.activation = m.activation == "tanh" ? ActKind::tanh : ActKind::relu;
    mc.input = ex;
    mc.classes = outputs;
    return build_lenet_variant(mc);
  }
  if (ex.size() != 1) {
    errors.push_back("model.arch mlp needs flat data, dataset examples are " + shape_str(ex));
    return DiffGraph{};
  }
  return build_mlp(ex[0], m.hidden, outputs, m.activation == "tanh" ? ActKind::tanh : ActKind::relu,
                   m.bias);
}

TrainConfig to_train_config(const RunConfig& cfg, Index n_train) {
  TrainConfig tc;
  tc.eta = cfg.train.eta;
  tc.period = RefreshPeriod::parse(cfg.train.k);
  tc.loss = parse_loss(cfg.train.loss);
  tc.batch_size = cfg.train.batch_size;
  tc.shuffle = cfg.train.shuffle;
  tc.seed = cfg.train.seed;
  tc.target_loss = cfg.train.target_loss;
  tc.probe_size = cfg.kernel.probe;
  tc.drift_every = cfg.kernel.drift_every;
  tc.keep_kernels = cfg.kernel.dump;
  tc.eval_every = cfg.train.eval_every;
  tc.eval_train_cap = cfg.train.eval_train_cap;
  if (cfg.train.steps > 0) {
    tc.steps = cfg.train.steps;
  } else {
    const Index bsz = tc.batch_size == 0 ? n_train : std::min(tc.batch_size, n_train);
    const std::uint64_t steps_per_epoch =
        tc.batch_size == 0 ? 1 : static_cast<std::uint64_t>((n_train + bsz - 1) / bsz);
    tc.steps = cfg.train.epochs * steps_per_epoch;
  }
  return tc;
}

void write_summary_csv(const std::filesystem::path& file, const RunSummary& s) {
  std::ofstream os(file);
  os << "k,eta,status,refreshes,steps,final_train_loss,final_train_acc,final_test_acc,wall_seconds\n";
  os << s.k << ',' << format_double(s.eta) << ',' << s.status << ',' << s.refreshes << ',' << s.steps
     << ',' << format_double(s.final_train_loss) << ',';
  if (s.final_train_acc >= 0) os << format_double(s.final_train_acc);
  os << ',';
  if (s.final_test_acc >= 0) os << format_double(s.final_test_acc);
  os << ',' << format_double(s.wall_seconds) << '\n';
}

template <class S>
int run_impl(const RunConfig& cfg, RunSummary& summary) {
  namespace fs = std::filesystem;
  LoadedData<S> data;
  try {
    data = load_data<S>(cfg);
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_data_error;
  }

  std::vector<std::string> errors;
  const DiffGraph graph = build_model(cfg, data.train, errors);
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
    return exit_config_error;
  }
  if (cfg.train.loss == "cross_entropy" && data.train.classes < 2) {
    std::cerr << "config error: cross_entropy needs a classification dataset\n";
    return exit_config_error;
  }

  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  fs::create_directories(dir / "kernel");
  {
    std::ofstream snap(dir / "config.snapshot");
    snap << run_config_snapshot(cfg) << "\n";
  }

  const TrainConfig tc = to_train_config(cfg, data.train.n());
  const ParamVector<S> params0 =
      init_params<S>(graph, cfg.model.seed, parse_init_scheme(cfg.model.init));

  std::ofstream metrics_stream(dir / "metrics.jsonl");
  const auto sink = [&](const MetricRecord& rec) {
    if (should_log(rec.step, tc.steps, rec.refresh)) metrics_stream << metric_to_jsonl(rec) << "\n";
  };

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult<S> result =
      train(graph, params0, data.train, data.test.n() > 0 ? &data.test : nullptr, tc, sink);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  metrics_stream.close();

  // Drift log (and optional plain-text kernel dumps).
  {
    std::ofstream drift(dir / "kernel" / "drift.jsonl");
    for (const DriftEvent& ev : result.drift_events) {
      ordered_json j;
      j["step"] = ev.step;
      j["anchor_id"] = ev.anchor_id;
      if (ev.has_previous) {
        j["rel_frobenius"] = ev.drift.rel_frobenius;
        j["alignment"] = ev.drift.alignment;
      } else {
        j["rel_frobenius"] = nullptr;
        j["alignment"] = nullptr;
      }
      drift << j.dump() << "\n";
      if (cfg.kernel.dump && ev.kernel.size() > 0)
        write_matrix_txt(ev.kernel, dir / "kernel" / ("theta_step" + std::to_string(ev.step) + ".txt"));
    }
  }

  const VecX<double> theta_t = result.params.data.template cast<double>();
  const VecX<double> theta_s =
      result.final_anchor ? result.final_anchor->theta_s.data.template cast<double>() : theta_t;
  write_checkpoint(dir / "checkpoint.bin", theta_t, theta_s, result.steps_run);

  summary.k = cfg.train.k;
  summary.eta = cfg.train.eta;
  summary.status = status_str(result.status);
  summary.refreshes = result.refreshes;
  summary.steps = result.steps_run;
  summary.wall_seconds = wall;
  summary.dir = dir;
  if (!result.history.empty()) {
    const MetricRecord& last = result.history.back();
    summary.final_train_loss = last.train_loss;
    if (last.train_acc) summary.final_train_acc = *last.train_acc;
    if (last.test_acc) summary.final_test_acc = *last.test_acc;
  }
  write_summary_csv(dir / "summary.csv", summary);

  return result.status == RunStatus::diverged ? exit_diverged : exit_ok;
}

}  // namespace

int run_experiment(const RunConfig& cfg, RunSummary* summary) {
  const std::vector<std::string> errors = validate_run_config(cfg);
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
    return exit_config_error;
  }
  RunSummary local;
  const int code = cfg.train.precision == "single" ? run_impl<float>(cfg, local)
                                                   : run_impl<double>(cfg, local);
  if (summary) *summary = local;
  return code;
}

RunSummary read_summary_csv(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("summary: cannot open " + file.string());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  std::vector<std::string> cells;
  std::stringstream ss(row);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  cells.resize(9);
  RunSummary s;
  s.k = cells[0];
  s.eta = cells[1].empty() ? 0.0 : std::stod(cells[1]);
  s.status = cells[2];
  s.refreshes = cells[3].empty() ? 0 : std::stoull(cells[3]);
  s.steps = cells[4].empty() ? 0 : std::stoull(cells[4]);
  s.final_train_loss = cells[5].empty() ? 0.0 : std::stod(cells[5]);
  s.final_train_acc = cells[6].empty() ? -1.0 : std::stod(cells[6]);
  s.final_test_acc = cells[7].empty() ? -1.0 : std::stod(cells[7]);
  s.wall_seconds = cells[8].empty() ? 0.0 : std::stod(cells[8]);
  s.dir = file.parent_path();
  return s;
}

namespace {

RunConfig configure_sweep_point(const RunConfig& base, const std::string& axis, const std::string& value,
                                const std::filesystem::path& out_root) {
  RunConfig cfg = base;
  if (axis == "K" || axis == "k") {
    cfg.train.k = value;
  } else if (axis == "eta") {
    cfg.train.eta = std::stod(value);
  } else {
    const auto seed = static_cast<std::uint64_t>(std::stoull(value));
    cfg.train.seed = seed;
    cfg.model.seed = seed;
  }
  cfg.out = (out_root / (axis + "-" + value)).string();
  return cfg;
}

int wait_all(std::vector<pid_t>& pids, std::vector<int>& codes) {
  for (std::size_t i = 0; i < pids.size(); ++i) {
    int status = 0;
    waitpid(pids[i], &status, 0);
    codes.push_back(WIFEXITED(status) ? WEXITSTATUS(status) : 1);
  }
  pids.clear();
  return 0;
}

}  // namespace

int sweep(const RunConfig& base, const std::string& axis, const std::vector<std::string>& values,
          int jobs, const std::filesystem::path& out_root, const std::filesystem::path& self_exe) {
  if (axis != "K" && axis != "k" && axis != "eta" && axis != "seed") {
    std::cerr << "config error: sweep axis must be K, eta or seed (got '" << axis << "')\n";
    return exit_config_error;
  }
  if (values.empty()) {
    std::cerr << "config error: sweep needs a non-empty value list\n";
    return exit_config_error;
  }
  {
    const std::vector<std::string> errors = validate_run_config(base);
    if (!errors.empty()) {
      for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
      return exit_config_error;
    }
  }
  std::filesystem::create_directories(out_root);

  std::vector<RunConfig> points;
  for (const std::string& v : values) points.push_back(configure_sweep_point(base, axis, v, out_root));

  std::vector<int> codes;
  if (jobs <= 1) {
    for (const RunConfig& cfg : points) codes.push_back(run_experiment(cfg));
  } else {
    // Independent child processes; each run is internally sequential.
    std::vector<pid_t> pids;
    for (const RunConfig& cfg : points) {
      std::filesystem::create_directories(cfg.out);
      const std::filesystem::path cfg_file = std::filesystem::path(cfg.out) / "config.json";
      {
        std::ofstream os(cfg_file);
        os << run_config_snapshot(cfg) << "\n";
      }
      const pid_t pid = fork();
      if (pid == 0) {
        execl(self_exe.c_str(), self_exe.c_str(), "run", "--config", cfg_file.c_str(), (char*)nullptr);
        _exit(127);
      }
      pids.push_back(pid);
      if (static_cast<int>(pids.size()) >= jobs) wait_all(pids, codes);
    }
    wait_all(pids, codes);
  }

  std::ofstream table(out_root / "sweep_summary.csv");
  table << "run,k,eta,status,refreshes,steps,final_train_loss,final_train_acc,final_test_acc\n";
  std::cout << "run\tk\teta\tstatus\ttrain_acc\ttest_acc\trefreshes\n";
  bool hard_error = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::filesystem::path dir = points[i].out;
    if (codes[i] == exit_config_error || codes[i] == exit_data_error || codes[i] == 127) {
      hard_error = true;
      std::cout << dir.filename().string() << "\t-\t-\terror(" << codes[i] << ")\t-\t-\t-\n";
      continue;
    }
    const RunSummary s = read_summary_csv(dir / "summary.csv");
    table << dir.filename().string() << ',' << s.k << ',' << format_double(s.eta) << ',' << s.status << ','
          << s.refreshes << ',' << s.steps << ',' << format_double(s.final_train_loss) << ',';
    if (s.final_train_acc >= 0) table << format_double(s.final_train_acc);
    table << ',';
    if (s.final_test_acc >= 0) table << format_double(s.final_test_acc);
    table << '\n';
    std::cout << dir.filename().string() << '\t' << s.k << '\t' << format_double(s.eta) << '\t' << s.status
              << '\t' << (s.final_train_acc >= 0 ? format_double(s.final_train_acc) : "-") << '\t'
              << (s.final_test_acc >= 0 ? format_double(s.final_test_acc) : "-") << '\t' << s.refreshes
              << '\n';
  }
  return hard_error ? exit_config_error : exit_ok;
}

int emit_curves(const std::vector<std::filesystem::path>& run_dirs,
                const std::filesystem::path& merged_out) {
  std::vector<RunCurveRef> refs;
  for (const auto& dir : run_dirs) {
    const std::filesystem::path metrics = dir / "metrics.jsonl";
    if (!std::filesystem::exists(metrics)) {
      std::cerr << "data error: missing metrics stream " << metrics << "\n";
      return exit_data_error;
    }
    RunCurveRef ref;
    ref.run_id = dir.filename().string();
    ref.metrics_jsonl = metrics;
    if (std::filesystem::exists(dir / "summary.csv")) {
      const RunSummary s = read_summary_csv(dir / "summary.csv");
      ref.k = s.k;
      ref.eta = s.eta;
    }
    const std::vector<MetricRecord> records = read_metrics_jsonl(metrics);
    write_curves_csv(records, dir / "curves.csv");
    refs.push_back(std::move(ref));
  }
  if (!merged_out.empty()) write_merged_csv(refs, merged_out);
  return exit_ok;
}

}  // namespace itlin
