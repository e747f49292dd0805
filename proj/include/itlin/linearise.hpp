#pragma once

#include <cstdint>
#include <stdexcept>

#include "itlin/autodiff.hpp"
#include "itlin/graph.hpp"
#include "itlin/tensor.hpp"

namespace itlin {

// Linearisation point: an immutable snapshot of the parameters whose Jacobian
// defines the frozen features. Gating patterns (ReLU masks, pool winners) come
// from forward evaluations at these parameters, so the linearised map is
// genuinely linear in the live parameters.
template <class S>
struct Anchor {
  const DiffGraph* graph = nullptr;
  ParamVector<S> theta_s;
  std::uint64_t step = 0;           // creation step s
  std::uint64_t refresh_index = 0;  // how many anchors have existed before + 1
};

template <class S>
Anchor<S> make_anchor(const DiffGraph& graph, const ParamVector<S>& params, std::uint64_t step,
                      std::uint64_t refresh_index = 1) {
  if (params.size() != graph.param_count)
    throw std::invalid_argument("make_anchor: parameter count mismatch");
  if (!params.all_finite()) throw std::invalid_argument("make_anchor: non-finite parameters");
  Anchor<S> a;
  a.graph = &graph;
  a.theta_s = params;  // deep copy; Eigen vectors own their storage
  a.step = step;
  a.refresh_index = refresh_index;
  return a;
}

// One evaluation of the linearised network at an input batch: the anchor
// trace (reusable by lin_grad) plus f_lin = f(theta_s) + J_s (theta - theta_s).
template <class S>
struct LinEval {
  Trace<S> trace;
  Tensor<S> f_lin;
};

template <class S>
LinEval<S> lin_eval(const Anchor<S>& anchor, const ParamVector<S>& current, const Tensor<S>& input) {
  if (current.size() != anchor.theta_s.size())
    throw std::invalid_argument("lin_forward: live parameter count mismatch");
  LinEval<S> ev;
  ev.trace = forward_trace(*anchor.graph, anchor.theta_s, input);
  ParamVector<S> tangent;
  tangent.data = current.data - anchor.theta_s.data;
  tangent.layout = anchor.theta_s.layout;
  const Tensor<S> dy = jvp(*anchor.graph, anchor.theta_s, ev.trace, tangent);
  ev.f_lin.shape = dy.shape;
  ev.f_lin.data = ev.trace.output().data + dy.data;
  return ev;
}

template <class S>
Tensor<S> lin_forward(const Anchor<S>& anchor, const ParamVector<S>& current, const Tensor<S>& input) {
  return lin_eval(anchor, current, input).f_lin;
}

// Gradient through the frozen features: vjp at theta_s, independent of the
// live parameters.
template <class S>
ParamVector<S> lin_grad(const Anchor<S>& anchor, const LinEval<S>& ev, const Tensor<S>& loss_derivative) {
  return vjp(*anchor.graph, anchor.theta_s, ev.trace, loss_derivative);
}

template <class S>
ParamVector<S> lin_grad(const Anchor<S>& anchor, const Tensor<S>& input, const Tensor<S>& loss_derivative) {
  return vjp(*anchor.graph, anchor.theta_s, input, loss_derivative);
}

}  // namespace itlin
