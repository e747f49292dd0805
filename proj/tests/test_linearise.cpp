#include "doctest.h"

#include <cmath>

#include "itlin/linearise.hpp"
#include "itlin/loss.hpp"
#include "itlin/model.hpp"
#include "oracles.hpp"

using namespace itlin;

namespace {

Tensor<double> rand_tensor(Shape shape, std::uint64_t seed) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  Rng rng(seed);
  for (Index i = 0; i < t.size(); ++i) t.data[i] = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("anchor is a deep snapshot") {
  const DiffGraph g = build_mlp(3, {5}, 2, ActKind::tanh);
  ParamVector<double> live = init_params(g, 1);
  const Tensor<double> x = rand_tensor({2, 3}, 2);
  const Anchor<double> anchor = make_anchor(g, live, 0);
  const Tensor<double> before = lin_forward(anchor, live, x);

  live.data.array() += 10.0;  // mutate the live parameters
  const Tensor<double> after_anchor_output = lin_forward(anchor, anchor.theta_s, x);
  CHECK(before.data == after_anchor_output.data);

  // two anchors from identical params produce identical outputs
  const Anchor<double> a2 = make_anchor(g, anchor.theta_s, 0);
  CHECK(lin_forward(a2, live, x).data == lin_forward(anchor, live, x).data);
}

TEST_CASE("anchor rejects non-finite parameters") {
  const DiffGraph g = build_mlp(2, {}, 1);
  ParamVector<double> p = init_params(g, 3);
  p.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(make_anchor(g, p, 0), std::invalid_argument);
}

TEST_CASE("f_lin at the anchor equals the plain forward pass") {
  const DiffGraph g = build_mlp(4, {8, 8}, 3, ActKind::relu);
  const ParamVector<double> p = init_params(g, 4);
  const Tensor<double> x = rand_tensor({3, 4}, 5);
  const Anchor<double> anchor = make_anchor(g, p, 0);
  const Tensor<double> lin = lin_forward(anchor, p, x);
  const Tensor<double> plain = forward(g, p, x);
  CHECK(lin.data == plain.data);
}

TEST_CASE("taylor expansion of the chained-scalar quadratic") {
  // f(theta; x) = a*b*x; both weights move 1.0 -> 1.5: f_lin = 2 + (2,2).(0.5,0.5) = 4.
  const DiffGraph g = make_graph({1}, {Dense{1, false}, Dense{1, false}});
  ParamVector<double> ps;
  ps.layout = g.layout;
  ps.data.resize(2);
  ps.data << 1.0, 1.0;
  ParamVector<double> pt = ps;
  pt.data << 1.5, 1.5;
  const Anchor<double> anchor = make_anchor(g, ps, 0);
  const Tensor<double> y = lin_forward(anchor, pt, Tensor<double>::of({1}, {2.0}));
  CHECK(y.data[0] == doctest::Approx(4.0));
  CHECK(forward(g, pt, Tensor<double>::of({1}, {2.0})).data[0] == doctest::Approx(4.5));
}

TEST_CASE("taylor exactness for a parameter-linear layer") {
  const DiffGraph g = make_graph({5}, {Dense{3, true}});
  const ParamVector<double> ps = init_params(g, 6);
  ParamVector<double> pt = ps;
  Rng rng(7);
  for (Index i = 0; i < pt.size(); ++i) pt.data[i] += rng.normal();
  const Tensor<double> x = rand_tensor({4, 5}, 8);
  const Anchor<double> anchor = make_anchor(g, ps, 0);
  const VecX<double> lin = lin_forward(anchor, pt, x).data;
  const VecX<double> full = forward(g, pt, x).data;
  CHECK((lin - full).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lin_grad edge cases: zero derivative, linear model residual") {
  const DiffGraph g = make_graph({2}, {Dense{1, false}});
  ParamVector<double> p;
  p.layout = g.layout;
  p.data.resize(2);
  p.data << 0.3, -0.2;
  const Anchor<double> anchor = make_anchor(g, p, 0);
  const Tensor<double> x = Tensor<double>::of({2}, {1.5, -2.5});

  CHECK(lin_grad(anchor, x, Tensor<double>::zeros({1, 1})).data.cwiseAbs().maxCoeff() == 0.0);

  // MSE residual r: gradient of 1/2 (w.x - y)^2 is x * r
  const double r = 0.8;
  const ParamVector<double> grad = lin_grad(anchor, x, Tensor<double>::of({1, 1}, {r}));
  CHECK(grad.data[0] == doctest::Approx(1.5 * r));
  CHECK(grad.data[1] == doctest::Approx(-2.5 * r));
}

TEST_CASE("lin_grad is the exact gradient of the composed linearised loss") {
  const DiffGraph g = build_mlp(3, {6}, 2, ActKind::tanh);
  const ParamVector<double> ps = init_params(g, 9);
  ParamVector<double> pt = ps;
  Rng rng(10);
  for (Index i = 0; i < pt.size(); ++i) pt.data[i] += 0.2 * rng.normal();
  const Tensor<double> x = rand_tensor({4, 3}, 11);
  const Tensor<double> y = rand_tensor({4, 2}, 12);
  const Anchor<double> anchor = make_anchor(g, ps, 0);

  // gradient via the module
  const LinEval<double> ev = lin_eval(anchor, pt, x);
  const Tensor<double> deriv = mse_derivative(ev.f_lin, y);
  const ParamVector<double> grad = lin_grad(anchor, ev, deriv);

  // central differences on theta -> L(f_lin(theta))
  const auto loss_of = [&](const VecX<double>& theta) {
    ParamVector<double> q = pt;
    q.data = theta;
    return mse_value(lin_forward(anchor, q, x), y);
  };
  const VecX<double> fd = oracles::central_diff_grad(loss_of, pt.data, 1e-5);
  CHECK((grad.data - fd).norm() / fd.norm() < 1e-6);
}

TEST_CASE("first-order agreement improves ~4x when epsilon halves (smooth nets)") {
  const DiffGraph g = build_mlp(4, {10, 10}, 2, ActKind::tanh);
  const ParamVector<double> ps = init_params(g, 13);
  const Tensor<double> x = rand_tensor({5, 4}, 14);
  const Anchor<double> anchor = make_anchor(g, ps, 0);
  ParamVector<double> v = init_params(g, 15);
  v.data /= v.data.norm();

  const auto gap_at = [&](double eps) {
    ParamVector<double> moved = ps;
    moved.data += eps * v.data;
    const VecX<double> lin = lin_forward(anchor, moved, x).data;
    const VecX<double> full = forward(g, moved, x).data;
    return (lin - full).norm();
  };
  const double eps = 1e-3;
  const double ratio = gap_at(eps) / gap_at(eps / 2);
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("relu gating is frozen at the anchor: f_lin is linear in theta") {
  const DiffGraph g = build_mlp(3, {8}, 2, ActKind::relu);
  const ParamVector<double> ps = init_params(g, 16);
  const Tensor<double> x = rand_tensor({3, 3}, 17);
  const Anchor<double> anchor = make_anchor(g, ps, 0);
  ParamVector<double> a = init_params(g, 18), b = init_params(g, 19);

  // linearity in the live parameters even across relu kinks
  ParamVector<double> mix = a;
  mix.data = 0.5 * a.data + 0.5 * b.data;
  const VecX<double> lhs = lin_forward(anchor, mix, x).data;
  const VecX<double> rhs =
      0.5 * lin_forward(anchor, a, x).data + 0.5 * lin_forward(anchor, b, x).data;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}
