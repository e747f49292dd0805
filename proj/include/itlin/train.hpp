#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <type_traits>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "itlin/data.hpp"
#include "itlin/kernel.hpp"
#include "itlin/linearise.hpp"
#include "itlin/loss.hpp"

namespace itlin {

// Feature-update periodicity K. Infinity is its own state, never a sentinel
// integer, so anchor-step arithmetic cannot overflow.
class RefreshPeriod {
 public:
  static RefreshPeriod finite(std::uint64_t k) {
    if (k < 1) throw std::invalid_argument("K must be >= 1");
    RefreshPeriod p;
    p.k_ = k;
    return p;
  }
  static RefreshPeriod infinite() {
    RefreshPeriod p;
    p.inf_ = true;
    return p;
  }
  static RefreshPeriod parse(const std::string& text) {
    if (text == "inf" || text == "Inf" || text == "INF") return infinite();
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size() || v < 1) throw std::invalid_argument("K must be a positive integer or 'inf'");
    return finite(static_cast<std::uint64_t>(v));
  }

  bool is_infinite() const { return inf_; }
  std::uint64_t k() const {
    if (inf_) throw std::logic_error("K is infinite");
    return k_;
  }
  // s = K * floor(t / K); 0 for the fully-linearised regime.
  std::uint64_t anchor_step(std::uint64_t t) const { return inf_ ? 0 : k_ * (t / k_); }
  bool refresh_due(std::uint64_t t) const { return inf_ ? t == 0 : t % k_ == 0; }
  std::string str() const { return inf_ ? "inf" : std::to_string(k_); }

  friend bool operator==(const RefreshPeriod& a, const RefreshPeriod& b) {
    return a.inf_ == b.inf_ && (a.inf_ || a.k_ == b.k_);
  }

 private:
  bool inf_ = false;
  std::uint64_t k_ = 1;
};

enum class RunStatus { running, converged, diverged, budget_exhausted };

inline const char* status_str(RunStatus s) {
  switch (s) {
    case RunStatus::running: return "running";
    case RunStatus::converged: return "converged";
    case RunStatus::diverged: return "diverged";
    default: return "budget-exhausted";
  }
}

struct TrainConfig {
  double eta = 0.01;
  RefreshPeriod period = RefreshPeriod::finite(1);
  LossKind loss = LossKind::mse;
  std::uint64_t steps = 0;
  Index batch_size = 0;  // 0 = full batch
  bool shuffle = true;
  std::uint64_t seed = 0;
  double divergence_loss_factor = 1e4;
  double divergence_norm_factor = 1e6;
  std::optional<double> target_loss;  // per-example mean; convergence when reached

  // instrumentation
  Index probe_size = 0;           // kernel-drift probe count; 0 disables
  std::uint64_t drift_every = 1;  // measure every n-th refresh
  bool keep_kernels = false;      // retain measured kernels (for matrix dumps)
  std::uint64_t eval_every = 0;   // accuracy cadence in steps; 0 = final only
  Index eval_train_cap = 2048;    // train-accuracy subset cap; 0 = full split

  void validate() const {
    if (!(eta >= 0) || !std::isfinite(eta)) throw std::invalid_argument("train: eta must be finite and >= 0");
    if (batch_size < 0) throw std::invalid_argument("train: batch size must be >= 0");
  }
};

// One self-contained metric record per executed step.
struct MetricRecord {
  std::uint64_t step = 0;   // index of the step that was executed
  std::uint64_t epoch = 0;
  std::uint64_t phase_index = 0;  // anchors created - 1
  double train_loss = 0.0;        // per-example mean loss of the step's batch
  std::optional<double> train_acc;
  std::optional<double> test_acc;
  double grad_norm = 0.0;
  double dist_from_anchor = 0.0;
  std::string status = "running";
  bool refresh = false;  // anchor refreshed immediately before this step
  std::optional<double> kernel_drift;
};

struct DivergenceWindow {
  double initial_loss = std::numeric_limits<double>::quiet_NaN();
  double initial_norm = std::numeric_limits<double>::quiet_NaN();
  double latest_loss = std::numeric_limits<double>::quiet_NaN();
  double latest_norm = std::numeric_limits<double>::quiet_NaN();
  bool empty() const { return !std::isfinite(initial_loss) && !std::isfinite(latest_loss); }
};

inline bool detect_divergence(const DivergenceWindow& w, double loss_factor = 1e4,
                              double norm_factor = 1e6) {
  if (w.empty()) throw std::invalid_argument("detect_divergence: empty window");
  if (!std::isfinite(w.latest_loss) || !std::isfinite(w.latest_norm)) return true;
  if (std::isfinite(w.initial_loss) && w.initial_loss > 0 && w.latest_loss > loss_factor * w.initial_loss)
    return true;
  if (std::isfinite(w.initial_norm) && w.initial_norm > 0 && w.latest_norm > norm_factor * w.initial_norm)
    return true;
  return false;
}

template <class S>
struct BatchView {
  Tensor<S> x;
  Tensor<S> targets;        // (n, c); empty for cross-entropy paths that use labels
  std::vector<int> labels;  // classification labels
  Index n = 0;
};

template <class S>
BatchView<S> gather_batch(const Dataset<S>& ds, const std::vector<Index>& rows, Index lo, Index hi) {
  BatchView<S> b;
  b.n = hi - lo;
  const Index per = ds.example_size();
  Shape xs = ds.inputs.shape;
  xs[0] = b.n;
  b.x = Tensor<S>::zeros(xs);
  const Index c = ds.targets.size() > 0 ? ds.targets.shape[1] : 0;
  if (c > 0) b.targets = Tensor<S>::zeros({b.n, c});
  b.labels.resize(static_cast<std::size_t>(b.n));
  for (Index i = 0; i < b.n; ++i) {
    const Index r = rows[static_cast<std::size_t>(lo + i)];
    b.x.data.segment(i * per, per) = ds.inputs.data.segment(r * per, per);
    if (c > 0) b.targets.data.segment(i * c, c) = ds.targets.data.segment(r * c, c);
    b.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(r)];
  }
  return b;
}

template <class S>
double batch_loss_value(LossKind kind, const Tensor<S>& pred, const BatchView<S>& batch) {
  return kind == LossKind::mse ? mse_value(pred, batch.targets)
                               : softmax_ce_value(pred, batch.labels);
}

template <class S>
Tensor<S> batch_loss_derivative(LossKind kind, const Tensor<S>& pred, const BatchView<S>& batch) {
  return kind == LossKind::mse ? mse_derivative(pred, batch.targets)
                               : softmax_ce_derivative(pred, batch.labels);
}

template <class S>
struct TrainState {
  std::uint64_t t = 0;
  ParamVector<S> theta;
  std::optional<Anchor<S>> anchor;
  std::uint64_t refreshes = 0;
  RunStatus status = RunStatus::running;
  DivergenceWindow window;
};

// Creates/replaces the anchor when the fixed-period schedule is due at the
// state's current step (before that step executes). Returns true on refresh.
template <class S>
bool maybe_refresh(const DiffGraph& graph, TrainState<S>& state, const TrainConfig& cfg) {
  const bool due = state.anchor ? cfg.period.refresh_due(state.t) : true;
  if (!due) return false;
  state.anchor = make_anchor(graph, state.theta, state.t, state.refreshes + 1);
  ++state.refreshes;
  return true;
}

// One iterative-linearisation update:
//   theta <- theta - eta * J_s^T L'(f_lin(theta))
// with features (Jacobian and activations) frozen at the anchor.
template <class S>
MetricRecord step(TrainState<S>& state, const BatchView<S>& batch, const TrainConfig& cfg) {
  if (state.status != RunStatus::running) throw std::logic_error("step: training already finished");
  if (!state.anchor) throw std::logic_error("step: no anchor (call maybe_refresh first)");

  MetricRecord rec;
  rec.step = state.t;
  rec.phase_index = state.refreshes - 1;

  const LinEval<S> ev = lin_eval(*state.anchor, state.theta, batch.x);
  const double loss_sum = batch_loss_value(cfg.loss, ev.f_lin, batch);
  const Tensor<S> deriv = batch_loss_derivative(cfg.loss, ev.f_lin, batch);
  const ParamVector<S> grad = lin_grad(*state.anchor, ev, deriv);

  state.theta.data -= static_cast<S>(cfg.eta) * grad.data;
  ++state.t;

  rec.train_loss = loss_sum / static_cast<double>(batch.n);
  rec.grad_norm = static_cast<double>(grad.data.norm());
  rec.dist_from_anchor = static_cast<double>((state.theta.data - state.anchor->theta_s.data).norm());

  const double norm = static_cast<double>(state.theta.data.norm());
  if (!std::isfinite(state.window.initial_loss)) state.window.initial_loss = rec.train_loss;
  if (!std::isfinite(state.window.initial_norm)) state.window.initial_norm = norm;
  state.window.latest_loss = rec.train_loss;
  state.window.latest_norm = state.theta.all_finite() ? norm : std::numeric_limits<double>::quiet_NaN();

  if (detect_divergence(state.window, cfg.divergence_loss_factor, cfg.divergence_norm_factor)) {
    state.status = RunStatus::diverged;
  } else if (cfg.target_loss && rec.train_loss <= *cfg.target_loss) {
    state.status = RunStatus::converged;
  }
  rec.status = status_str(state.status);
  return rec;
}

struct DriftEvent {
  std::uint64_t step = 0;
  std::uint64_t anchor_id = 0;
  DriftRecord drift;
  bool has_previous = false;
  MatX<double> kernel;  // filled only when TrainConfig::keep_kernels
};

template <class S>
struct TrainResult {
  ParamVector<S> params;
  std::optional<Anchor<S>> final_anchor;
  RunStatus status = RunStatus::budget_exhausted;
  std::vector<MetricRecord> history;
  std::vector<std::uint64_t> refresh_steps;
  std::vector<DriftEvent> drift_events;
  std::uint64_t refreshes = 0;
  std::uint64_t steps_run = 0;
};

// Accuracy of the linearised model (the function actually being trained) on a
// dataset, evaluated in chunks.
template <class S>
double lin_accuracy(const Anchor<S>& anchor, const ParamVector<S>& theta, const Dataset<S>& ds,
                    Index chunk = 512) {
  if (ds.classes == 0 || ds.n() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Index n = ds.n();
  const Index c = ds.classes;
  const Index per = ds.example_size();
  Index correct = 0;
  for (Index lo = 0; lo < n; lo += chunk) {
    const Index hi = std::min(n, lo + chunk);
    Shape xs = ds.inputs.shape;
    xs[0] = hi - lo;
    Tensor<S> x;
    x.shape = std::move(xs);
    x.data = ds.inputs.data.segment(lo * per, (hi - lo) * per);
    const Tensor<S> logits = lin_forward(anchor, theta, x);
    auto L = logits.as_matrix(hi - lo, c);
    for (Index i = 0; i < hi - lo; ++i) {
      Index arg = 0;
      L.row(i).maxCoeff(&arg);
      if (static_cast<int>(arg) == ds.labels[static_cast<std::size_t>(lo + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// Full fixed-period iterative-linearisation run over a dataset.
template <class S>
TrainResult<S> train(const DiffGraph& graph, const ParamVector<S>& params0, const Dataset<S>& train_set,
                     const std::type_identity_t<Dataset<S>>* test_set, const TrainConfig& cfg,
                     const std::function<void(const MetricRecord&)>& sink = {},
                     const std::function<void(const std::type_identity_t<TrainState<S>>&)>& observer = {}) {
  cfg.validate();
  if (train_set.n() == 0) throw std::invalid_argument("train: empty dataset");
  if (cfg.loss == LossKind::softmax_ce && train_set.classes < 2)
    throw std::invalid_argument("train: cross-entropy needs a classification dataset");

  TrainResult<S> result;
  TrainState<S> state;
  state.theta = params0;

  const Index n = train_set.n();
  const Index bsz = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));

  // Probe set and evaluation subset are fixed up front, deterministically.
  std::optional<Tensor<S>> probe;
  if (cfg.probe_size > 0) {
    const auto rows = stratified_indices(train_set, std::min<Index>(cfg.probe_size, n), cfg.seed + 1);
    probe = gather_batch(train_set, rows, 0, static_cast<Index>(rows.size())).x;
  }
  std::optional<Dataset<S>> train_eval;
  if (train_set.classes > 0) {
    const Index cap = cfg.eval_train_cap == 0 ? n : std::min(cfg.eval_train_cap, n);
    train_eval = cap == n ? train_set : stratified_subset(train_set, cap, cfg.seed + 2);
  }

  std::optional<KernelMatrix<S>> prev_kernel;
  std::uint64_t epoch = 0;
  Index cursor = 0;  // position within the current epoch's order
  Rng shuffle_rng(cfg.seed);
  if (cfg.batch_size != 0 && cfg.shuffle) shuffle_rng.shuffle(order.begin(), order.end());

  BatchView<S> full_batch;
  if (cfg.batch_size == 0) full_batch = gather_batch(train_set, order, 0, n);

  for (std::uint64_t t = 0; t < cfg.steps; ++t) {
    const bool refreshed = maybe_refresh(graph, state, cfg);
    std::optional<double> drift_value;
    if (refreshed) {
      result.refresh_steps.push_back(t);
      if (probe && (state.refreshes - 1) % cfg.drift_every == 0) {
        KernelMatrix<S> k = empirical_ntk(graph, state.theta, *probe, KernelMode::scalar);
        k.step = t;
        k.anchor_id = state.refreshes;
        DriftEvent ev;
        ev.step = t;
        ev.anchor_id = state.refreshes;
        if (prev_kernel) {
          ev.drift = kernel_drift(*prev_kernel, k);
          ev.has_previous = true;
          drift_value = ev.drift.rel_frobenius;
        }
        if (cfg.keep_kernels) ev.kernel = k.theta.template cast<double>();
        result.drift_events.push_back(std::move(ev));
        prev_kernel = std::move(k);
      }
    }

    BatchView<S> batch;
    const BatchView<S>* bp = &full_batch;
    if (cfg.batch_size != 0) {
      if (cursor >= n) {
        cursor = 0;
        ++epoch;
        if (cfg.shuffle) shuffle_rng.shuffle(order.begin(), order.end());
      }
      const Index hi = std::min<Index>(cursor + bsz, n);
      batch = gather_batch(train_set, order, cursor, hi);
      cursor = hi;
      bp = &batch;
    } else {
      epoch = t;  // one full-batch step consumes one pass over the data
    }

    MetricRecord rec = step(state, *bp, cfg);
    rec.epoch = epoch;
    rec.refresh = refreshed;
    rec.kernel_drift = drift_value;

    const bool finished = state.status != RunStatus::running || t + 1 == cfg.steps;
    if ((cfg.eval_every > 0 && (t % cfg.eval_every) == 0) || finished) {
      if (state.anchor && state.theta.all_finite() && train_set.classes > 0) {
        rec.train_acc = lin_accuracy(*state.anchor, state.theta, *train_eval);
        if (test_set && test_set->n() > 0) rec.test_acc = lin_accuracy(*state.anchor, state.theta, *test_set);
      }
    }

    result.history.push_back(rec);
    if (sink) sink(rec);
    if (observer) observer(state);
    if (state.status != RunStatus::running) break;
  }

  result.params = state.theta;
  result.final_anchor = state.anchor;
  result.refreshes = state.refreshes;
  result.steps_run = state.t;
  result.status = state.status == RunStatus::running ? RunStatus::budget_exhausted : state.status;
  return result;
}

}  // namespace itlin
