#include "itlin/runconfig.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace itlin {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_keys(const ordered_json& obj, const std::set<std::string>& allowed, const std::string& where,
                std::vector<std::string>& errors) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) errors.push_back(where + ": unknown key '" + it.key() + "'");
}

template <class T>
void get_to(const ordered_json& obj, const char* key, T& out, const std::string& where,
            std::vector<std::string>& errors) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const ordered_json::exception&) {
    errors.push_back(where + ": key '" + std::string(key) + "' has the wrong type");
  }
}

void parse_dataset(const ordered_json& j, DatasetSection& d, std::vector<std::string>& errors) {
  check_keys(j,
             {"kind", "root", "subset_train", "subset_test", "subset_seed", "synthetic", "n", "n_test",
              "dim", "seed", "cond", "noise", "separation", "classes"},
             "dataset", errors);
  get_to(j, "kind", d.kind, "dataset", errors);
  get_to(j, "root", d.root, "dataset", errors);
  get_to(j, "subset_train", d.subset_train, "dataset", errors);
  get_to(j, "subset_test", d.subset_test, "dataset", errors);
  get_to(j, "subset_seed", d.subset_seed, "dataset", errors);
  get_to(j, "synthetic", d.synthetic, "dataset", errors);
  get_to(j, "n", d.n, "dataset", errors);
  get_to(j, "n_test", d.n_test, "dataset", errors);
  get_to(j, "dim", d.dim, "dataset", errors);
  get_to(j, "seed", d.seed, "dataset", errors);
  get_to(j, "cond", d.cond, "dataset", errors);
  get_to(j, "noise", d.noise, "dataset", errors);
  get_to(j, "separation", d.separation, "dataset", errors);
  get_to(j, "classes", d.classes, "dataset", errors);
}

void parse_model(const ordered_json& j, ModelSection& m, std::vector<std::string>& errors) {
  check_keys(j,
             {"arch", "conv_channels", "kernel_size", "pooling", "dense_widths", "activation", "init",
              "seed", "hidden", "bias"},
             "model", errors);
  get_to(j, "arch", m.arch, "model", errors);
  get_to(j, "conv_channels", m.conv_channels, "model", errors);
  get_to(j, "kernel_size", m.kernel_size, "model", errors);
  get_to(j, "pooling", m.pooling, "model", errors);
  get_to(j, "dense_widths", m.dense_widths, "model", errors);
  get_to(j, "activation", m.activation, "model", errors);
  get_to(j, "init", m.init, "model", errors);
  get_to(j, "seed", m.seed, "model", errors);
  get_to(j, "hidden", m.hidden, "model", errors);
  get_to(j, "bias", m.bias, "model", errors);
}

void parse_train(const ordered_json& j, TrainSection& t, std::vector<std::string>& errors) {
  check_keys(j,
             {"eta", "k", "loss", "steps", "epochs", "batch_size", "shuffle", "seed", "precision",
              "target_loss", "eval_every", "eval_train_cap"},
             "train", errors);
  get_to(j, "eta", t.eta, "train", errors);
  if (j.contains("k")) {
    if (j.at("k").is_string())
      t.k = j.at("k").get<std::string>();
    else if (j.at("k").is_number_integer())
      t.k = std::to_string(j.at("k").get<long long>());
    else
      errors.push_back("train: key 'k' must be a positive integer or the string \"inf\"");
  }
  get_to(j, "loss", t.loss, "train", errors);
  get_to(j, "steps", t.steps, "train", errors);
  get_to(j, "epochs", t.epochs, "train", errors);
  get_to(j, "batch_size", t.batch_size, "train", errors);
  get_to(j, "shuffle", t.shuffle, "train", errors);
  get_to(j, "seed", t.seed, "train", errors);
  get_to(j, "precision", t.precision, "train", errors);
  if (j.contains("target_loss") && !j.at("target_loss").is_null()) {
    double v = 0;
    get_to(j, "target_loss", v, "train", errors);
    t.target_loss = v;
  }
  get_to(j, "eval_every", t.eval_every, "train", errors);
  get_to(j, "eval_train_cap", t.eval_train_cap, "train", errors);
}

void parse_kernel(const ordered_json& j, KernelSection& k, std::vector<std::string>& errors) {
  check_keys(j, {"probe", "drift_every", "dump"}, "kernel", errors);
  get_to(j, "probe", k.probe, "kernel", errors);
  get_to(j, "drift_every", k.drift_every, "kernel", errors);
  get_to(j, "dump", k.dump, "kernel", errors);
}

}  // namespace

RunConfig parse_run_config_json(const std::string& text, std::vector<std::string>& errors) {
  RunConfig cfg;
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    errors.push_back(std::string("config: invalid JSON: ") + e.what());
    return cfg;
  }
  if (!j.is_object()) {
    errors.push_back("config: top level must be an object");
    return cfg;
  }
  check_keys(j, {"dataset", "model", "train", "kernel", "out", "deterministic"}, "config", errors);
  if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset, errors);
  if (j.contains("model")) parse_model(j.at("model"), cfg.model, errors);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train, errors);
  if (j.contains("kernel")) parse_kernel(j.at("kernel"), cfg.kernel, errors);
  get_to(j, "out", cfg.out, "config", errors);
  get_to(j, "deterministic", cfg.deterministic, "config", errors);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, std::vector<std::string>& errors) {
  std::ifstream is(path);
  if (!is) {
    errors.push_back("config: cannot open " + path.string());
    return RunConfig{};
  }
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config_json(ss.str(), errors);
}

void apply_overrides(RunConfig& cfg, const FlagOverrides& flags) {
  if (flags.dataset) cfg.dataset.kind = *flags.dataset;
  if (flags.k) cfg.train.k = *flags.k;
  if (flags.lr) cfg.train.eta = *flags.lr;
  if (flags.loss) cfg.train.loss = *flags.loss;
  if (flags.epochs) {
    cfg.train.epochs = *flags.epochs;
    cfg.train.steps = 0;
  }
  if (flags.batch_size) cfg.train.batch_size = *flags.batch_size;
  if (flags.seed) {
    cfg.train.seed = *flags.seed;
    cfg.model.seed = *flags.seed;
  }
  if (flags.subset) cfg.dataset.subset_train = *flags.subset;
  if (flags.probe) cfg.kernel.probe = *flags.probe;
  if (flags.out) cfg.out = *flags.out;
  if (flags.deterministic) cfg.deterministic = *flags.deterministic;
}

std::vector<std::string> validate_run_config(const RunConfig& cfg) {
  std::vector<std::string> errors;
  const auto& d = cfg.dataset;
  if (d.kind != "mnist" && d.kind != "cifar10" && d.kind != "synthetic")
    errors.push_back("dataset.kind must be mnist, cifar10 or synthetic (got '" + d.kind + "')");
  if ((d.kind == "mnist" || d.kind == "cifar10") && d.root.empty())
    errors.push_back("dataset.root is required for " + d.kind + " (or set ITLIN_DATA_ROOT)");
  if (d.kind == "synthetic") {
    if (d.synthetic != "two-gaussians" && d.synthetic != "linear-teacher" && d.synthetic != "random-labels")
      errors.push_back("dataset.synthetic must be two-gaussians, linear-teacher or random-labels");
    if (d.n < 1) errors.push_back("dataset.n must be >= 1");
    if (d.dim < 1) errors.push_back("dataset.dim must be >= 1");
    if (d.cond < 1) errors.push_back("dataset.cond must be >= 1");
    if (d.classes < 2) errors.push_back("dataset.classes must be >= 2");
  }
  if (d.subset_train < 0) errors.push_back("dataset.subset_train must be >= 0");
  if (d.subset_test < 0) errors.push_back("dataset.subset_test must be >= 0");

  const auto& m = cfg.model;
  if (m.arch != "lenet" && m.arch != "mlp")
    errors.push_back("model.arch must be lenet or mlp (got '" + m.arch + "')");
  if (m.arch == "lenet") {
    if (m.conv_channels < 1) errors.push_back("model.conv_channels must be >= 1");
    if (m.kernel_size < 1) errors.push_back("model.kernel_size must be >= 1");
    if (m.pooling != "max" && m.pooling != "avg") errors.push_back("model.pooling must be max or avg");
    for (Index w : m.dense_widths)
      if (w < 1) errors.push_back("model.dense_widths entries must be >= 1");
  } else {
    for (Index w : m.hidden)
      if (w < 1) errors.push_back("model.hidden entries must be >= 1");
  }
  if (m.activation != "relu" && m.activation != "tanh")
    errors.push_back("model.activation must be relu or tanh");
  if (m.init != "fan_in_normal" && m.init != "fan_in_uniform" && m.init != "normal" && m.init != "uniform")
    errors.push_back("model.init must be fan_in_normal or fan_in_uniform");

  const auto& t = cfg.train;
  if (!(t.eta > 0) || !std::isfinite(t.eta)) errors.push_back("train.eta must be a positive finite number");
  const bool k_is_int = !t.k.empty() && std::all_of(t.k.begin(), t.k.end(), [](unsigned char c) {
                          return std::isdigit(c) != 0;
                        }) && t.k != "0" && t.k.find_first_not_of('0') != std::string::npos;
  if (t.k != "inf" && !k_is_int)
    errors.push_back("train.k must be a positive integer or the string \"inf\" (got '" + t.k + "')");
  if (t.loss != "mse" && t.loss != "cross_entropy")
    errors.push_back("train.loss must be mse or cross_entropy");
  if ((t.steps == 0) == (t.epochs == 0))
    errors.push_back("train: exactly one of steps/epochs must be positive");
  if (t.batch_size < 0) errors.push_back("train.batch_size must be >= 0 (0 = full batch)");
  if (t.precision != "double" && t.precision != "single")
    errors.push_back("train.precision must be double or single");
  if (t.target_loss && !(*t.target_loss > 0)) errors.push_back("train.target_loss must be positive");
  const auto& k = cfg.kernel;
  if (k.probe < 0) errors.push_back("kernel.probe must be >= 0");
  if (k.drift_every < 1) errors.push_back("kernel.drift_every must be >= 1");

  if (cfg.out.empty()) errors.push_back("out must be a non-empty path");
  return errors;
}

std::string run_config_snapshot(const RunConfig& cfg) {
  ordered_json j;
  ordered_json d;
  d["kind"] = cfg.dataset.kind;
  d["root"] = cfg.dataset.root;
  d["subset_train"] = cfg.dataset.subset_train;
  d["subset_test"] = cfg.dataset.subset_test;
  d["subset_seed"] = cfg.dataset.subset_seed;
  if (cfg.dataset.kind == "synthetic") {
    d["synthetic"] = cfg.dataset.synthetic;
    d["n"] = cfg.dataset.n;
    d["n_test"] = cfg.dataset.n_test;
    d["dim"] = cfg.dataset.dim;
    d["seed"] = cfg.dataset.seed;
    d["cond"] = cfg.dataset.cond;
    d["noise"] = cfg.dataset.noise;
    d["separation"] = cfg.dataset.separation;
    d["classes"] = cfg.dataset.classes;
  }
  j["dataset"] = d;
  ordered_json m;
  m["arch"] = cfg.model.arch;
  if (cfg.model.arch == "lenet") {
    m["conv_channels"] = cfg.model.conv_channels;
    m["kernel_size"] = cfg.model.kernel_size;
    m["pooling"] = cfg.model.pooling;
    m["dense_widths"] = cfg.model.dense_widths;
  } else {
    m["hidden"] = cfg.model.hidden;
    m["bias"] = cfg.model.bias;
  }
  m["activation"] = cfg.model.activation;
  m["init"] = cfg.model.init;
  m["seed"] = cfg.model.seed;
  j["model"] = m;
  ordered_json t;
  t["eta"] = cfg.train.eta;
  t["k"] = cfg.train.k;
  t["loss"] = cfg.train.loss;
  t["steps"] = cfg.train.steps;
  t["epochs"] = cfg.train.epochs;
  t["batch_size"] = cfg.train.batch_size;
  t["shuffle"] = cfg.train.shuffle;
  t["seed"] = cfg.train.seed;
  t["precision"] = cfg.train.precision;
  if (cfg.train.target_loss)
    t["target_loss"] = *cfg.train.target_loss;
  else
    t["target_loss"] = nullptr;
  t["eval_every"] = cfg.train.eval_every;
  t["eval_train_cap"] = cfg.train.eval_train_cap;
  j["train"] = t;
  ordered_json k;
  k["probe"] = cfg.kernel.probe;
  k["drift_every"] = cfg.kernel.drift_every;
  k["dump"] = cfg.kernel.dump;
  j["kernel"] = k;
  j["out"] = cfg.out;
  j["deterministic"] = cfg.deterministic;
  return j.dump(2);
}

}  // namespace itlin
