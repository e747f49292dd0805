// Experiment runner for fixed-period iterative-linearisation training.
//
//   itlin run    --config cfg.json [overrides]     one experiment
//   itlin sweep  --config cfg.json --axis K --values 1,10,100,inf
//   itlin curves --runs dirA,dirB [--out merged.csv]
//   itlin gen-digits --out data/digits [--train N --test N --seed S]

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "itlin/digits.hpp"
#include "itlin/runconfig.hpp"
#include "itlin/runner.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::filesystem::path self_path() {
  std::error_code ec;
  const auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  return ec ? std::filesystem::path("itlin") : p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"iterative linearisation training engine"};
  app.require_subcommand(1);

  // run --------------------------------------------------------------------
  auto* run_cmd = app.add_subcommand("run", "execute one configured experiment");
  std::string run_config_path;
  run_cmd->add_option("--config", run_config_path, "JSON run configuration")->required();
  itlin::FlagOverrides flags;
  std::string flag_dataset, flag_k, flag_loss, flag_out;
  double flag_lr = 0;
  std::uint64_t flag_epochs = 0, flag_seed = 0;
  itlin::Index flag_batch = 0, flag_subset = 0, flag_probe = 0;
  bool flag_deterministic = false;
  auto* o_dataset = run_cmd->add_option("--dataset", flag_dataset, "dataset kind override");
  auto* o_k = run_cmd->add_option("--k", flag_k, "feature update period (int or 'inf')");
  auto* o_lr = run_cmd->add_option("--lr", flag_lr, "learning rate");
  auto* o_loss = run_cmd->add_option("--loss", flag_loss, "mse | cross_entropy");
  auto* o_epochs = run_cmd->add_option("--epochs", flag_epochs, "epoch budget");
  auto* o_batch = run_cmd->add_option("--batch-size", flag_batch, "minibatch size (0 = full batch)");
  auto* o_seed = run_cmd->add_option("--seed", flag_seed, "training + init seed");
  auto* o_subset = run_cmd->add_option("--subset", flag_subset, "stratified train subset size");
  auto* o_probe = run_cmd->add_option("--probe", flag_probe, "kernel drift probe size");
  auto* o_out = run_cmd->add_option("--out", flag_out, "run directory");
  auto* o_det = run_cmd->add_flag("--deterministic", flag_deterministic, "fixed-order reductions");

  // sweep ------------------------------------------------------------------
  auto* sweep_cmd = app.add_subcommand("sweep", "one run per value of a swept axis");
  std::string sweep_config_path, axis, values_csv, sweep_out = "runs/sweep";
  int jobs = 1;
  sweep_cmd->add_option("--config", sweep_config_path, "base JSON configuration")->required();
  sweep_cmd->add_option("--axis", axis, "K | eta | seed")->required();
  sweep_cmd->add_option("--values", values_csv, "comma-separated values")->required();
  sweep_cmd->add_option("--jobs", jobs, "parallel worker processes");
  sweep_cmd->add_option("--out", sweep_out, "sweep output root");

  // curves -----------------------------------------------------------------
  auto* curves_cmd = app.add_subcommand("curves", "emit plot-ready CSV from run directories");
  std::string runs_csv, merged_out;
  curves_cmd->add_option("--runs", runs_csv, "comma-separated run directories")->required();
  curves_cmd->add_option("--out", merged_out, "merged long-format CSV path");

  // gen-digits -------------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("gen-digits", "render the bundled digit corpus as MNIST-format IDX");
  std::string gen_out, fixtures = "data/fixtures";
  itlin::Index gen_train = 10000, gen_test = 2000;
  std::uint64_t gen_seed = 7;
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--fixtures", fixtures, "directory with the 8x8 digit fixture");
  gen_cmd->add_option("--train", gen_train, "train image count");
  gen_cmd->add_option("--test", gen_test, "test image count");
  gen_cmd->add_option("--seed", gen_seed, "corpus seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : itlin::exit_config_error;
  }

  try {
    if (*run_cmd) {
      std::vector<std::string> errors;
      itlin::RunConfig cfg = itlin::load_run_config(run_config_path, errors);
      if (*o_dataset) flags.dataset = flag_dataset;
      if (*o_k) flags.k = flag_k;
      if (*o_lr) flags.lr = flag_lr;
      if (*o_loss) flags.loss = flag_loss;
      if (*o_epochs) flags.epochs = flag_epochs;
      if (*o_batch) flags.batch_size = flag_batch;
      if (*o_seed) flags.seed = flag_seed;
      if (*o_subset) flags.subset = flag_subset;
      if (*o_probe) flags.probe = flag_probe;
      if (*o_out) flags.out = flag_out;
      if (*o_det) flags.deterministic = flag_deterministic;
      itlin::apply_overrides(cfg, flags);
      // structural and semantic problems are reported together, before any compute
      for (const std::string& e : itlin::validate_run_config(cfg)) errors.push_back(e);
      if (!errors.empty()) {
        for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
        return itlin::exit_config_error;
      }
      itlin::RunSummary summary;
      const int code = itlin::run_experiment(cfg, &summary);
      if (code == itlin::exit_ok || code == itlin::exit_diverged)
        std::cout << "run " << summary.dir.string() << " status=" << summary.status
                  << " steps=" << summary.steps << " refreshes=" << summary.refreshes << "\n";
      return code;
    }
    if (*sweep_cmd) {
      std::vector<std::string> errors;
      const itlin::RunConfig base = itlin::load_run_config(sweep_config_path, errors);
      if (!errors.empty()) {
        for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
        return itlin::exit_config_error;  // semantic checks run inside sweep
      }
      return itlin::sweep(base, axis, split_csv(values_csv), jobs, sweep_out, self_path());
    }
    if (*curves_cmd) {
      std::vector<std::filesystem::path> dirs;
      for (const auto& d : split_csv(runs_csv)) dirs.emplace_back(d);
      if (dirs.empty()) {
        std::cerr << "config error: --runs must list at least one run directory\n";
        return itlin::exit_config_error;
      }
      return itlin::emit_curves(dirs, std::filesystem::path(merged_out));
    }
    if (*gen_cmd) {
      itlin::DigitsCorpusOptions opts;
      opts.train_n = gen_train;
      opts.test_n = gen_test;
      opts.seed = gen_seed;
      itlin::generate_digits_corpus(fixtures, gen_out, opts);
      std::cout << "wrote " << gen_train << "+" << gen_test << " images to " << gen_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return itlin::exit_data_error;
  }
  return 0;
}
