#include "doctest.h"

#include <cmath>

#include "itlin/autodiff.hpp"
#include "itlin/model.hpp"
#include "oracles.hpp"

using namespace itlin;

namespace {

ParamVector<double> random_params(const DiffGraph& g, std::uint64_t seed, double scale = 0.5) {
  ParamVector<double> p;
  p.data.resize(g.param_count);
  p.layout = g.layout;
  Rng rng(seed);
  for (Index i = 0; i < p.size(); ++i) p.data[i] = scale * rng.normal();
  return p;
}

Tensor<double> random_tensor(Shape shape, std::uint64_t seed) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  Rng rng(seed);
  for (Index i = 0; i < t.size(); ++i) t.data[i] = rng.normal();
  return t;
}

// Jacobian materialised column-by-column via jvp on basis tangents.
MatX<double> materialise_jacobian(const DiffGraph& g, const ParamVector<double>& params,
                                  const Tensor<double>& x) {
  const Trace<double> trace = forward_trace(g, params, x);
  const Index out_n = trace.output().size();
  MatX<double> J(out_n, g.param_count);
  ParamVector<double> basis = ParamVector<double>::zeros_like(params);
  for (Index j = 0; j < g.param_count; ++j) {
    basis.data.setZero();
    basis.data[j] = 1.0;
    J.col(j) = jvp(g, params, trace, basis).data;
  }
  return J;
}

}  // namespace

TEST_CASE("forward: hand-computed dense layer") {
  const DiffGraph g = make_graph({2}, {Dense{2, true}});
  ParamVector<double> p;
  p.layout = g.layout;
  p.data.resize(6);
  p.data << 1, 2, 3, 4, 0, 0;  // W row-major then b
  const Tensor<double> y = forward(g, p, Tensor<double>::of({2}, {1, 1}));
  CHECK(y.shape == Shape{1, 2});
  CHECK(y.data[0] == doctest::Approx(3.0));
  CHECK(y.data[1] == doctest::Approx(7.0));
}

TEST_CASE("forward: zero batch through relu-dense with zero bias stays zero") {
  const DiffGraph g = make_graph({4}, {Dense{3, true}, Activation{ActKind::relu}, Dense{2, true}});
  ParamVector<double> p = random_params(g, 3);
  // zero all biases
  for (const ParamSlot& s : *g.layout)
    if (s.name == "bias") p.data.segment(s.offset, s.size).setZero();
  const Tensor<double> y = forward(g, p, Tensor<double>::zeros({5, 4}));
  CHECK(y.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward: lenet variant matches the naive convolution oracle") {
  ModelConfig cfg;
  cfg.conv_channels = 50;
  const DiffGraph g = build_lenet_variant(cfg);
  const ParamVector<double> p = init_params(g, 11);
  const Tensor<double> x = random_tensor({1, 1, 28, 28}, 17);

  const auto blocks = p.unflatten();
  Tensor<double> a = oracles::naive_conv2d(x, 1, 1, 28, 28, blocks[0], blocks[1], 50, 5, false);
  a = oracles::naive_relu(a);
  a = oracles::naive_maxpool2(a, 1, 50, 24, 24);
  a = oracles::naive_conv2d(a, 1, 50, 12, 12, blocks[2], blocks[3], 50, 5, false);
  a = oracles::naive_relu(a);
  a = oracles::naive_maxpool2(a, 1, 50, 8, 8);
  a.shape = {1, 800};
  a = oracles::naive_dense(a, 1, 800, blocks[4], blocks[5], 500);
  a = oracles::naive_relu(a);
  a = oracles::naive_dense(a, 1, 500, blocks[6], blocks[7], 10);

  const Tensor<double> y = forward(g, p, x);
  REQUIRE(y.data.size() == a.data.size());
  CHECK((y.data - a.data).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("forward: same padding matches the naive oracle") {
  const DiffGraph g = make_graph({2, 6, 6}, {Conv2D{3, 3, Padding::same}, Flatten{}});
  const ParamVector<double> p = random_params(g, 5);
  const Tensor<double> x = random_tensor({2, 2, 6, 6}, 6);
  const auto blocks = p.unflatten();
  Tensor<double> ref = oracles::naive_conv2d(x, 2, 2, 6, 6, blocks[0], blocks[1], 3, 3, true);
  const Tensor<double> y = forward(g, p, x);
  CHECK((y.data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("vjp: scalar linear model gives the input as gradient") {
  const DiffGraph g = make_graph({1}, {Dense{1, false}});
  ParamVector<double> p;
  p.layout = g.layout;
  p.data.resize(1);
  p.data[0] = 0.7;
  const Tensor<double> x = Tensor<double>::of({1}, {3.0});
  const ParamVector<double> grad = vjp(g, p, x, Tensor<double>::of({1, 1}, {1.0}));
  CHECK(grad.data[0] == doctest::Approx(3.0));

  const ParamVector<double> zero = vjp(g, p, x, Tensor<double>::of({1, 1}, {0.0}));
  CHECK(zero.data[0] == 0.0);
}

TEST_CASE("vjp agrees with the materialised Jacobian on a small MLP") {
  const DiffGraph g = build_mlp(3, {5, 4}, 2, ActKind::tanh);
  const ParamVector<double> p = random_params(g, 21);
  const Tensor<double> x = random_tensor({2, 3}, 22);
  const MatX<double> J = materialise_jacobian(g, p, x);

  Rng rng(23);
  Tensor<double> v = Tensor<double>::zeros({2, 2});
  for (Index i = 0; i < v.size(); ++i) v.data[i] = rng.normal();
  const ParamVector<double> got = vjp(g, p, x, v);
  const VecX<double> expect = J.transpose() * v.data;
  CHECK((got.data - expect).norm() / expect.norm() < 1e-10);
}

TEST_CASE("jvp: chained scalar weights realise the quadratic example") {
  // f(theta; x) = a*b*x with a=b=1 behaves like theta^2 x at theta=1.
  const DiffGraph g = make_graph({1}, {Dense{1, false}, Dense{1, false}});
  ParamVector<double> p;
  p.layout = g.layout;
  p.data.resize(2);
  p.data << 1.0, 1.0;
  ParamVector<double> tangent = p;
  tangent.data << 0.5, 0.5;
  const Tensor<double> x = Tensor<double>::of({1}, {2.0});
  const Tensor<double> dy = jvp(g, p, x, tangent);
  CHECK(dy.data[0] == doctest::Approx(2.0));  // d/dtheta (theta^2 x) * 0.5 = 2*1*2*0.5

  tangent.data.setZero();
  CHECK(jvp(g, p, x, tangent).data[0] == 0.0);
}

TEST_CASE("jvp matches central differences on a smooth lenet variant") {
  ModelConfig cfg;
  cfg.conv_channels = 4;
  cfg.activation = ActKind::tanh;
  cfg.pooling = PoolKind::avg;
  cfg.dense_widths = {32};
  const DiffGraph g = build_lenet_variant(cfg);
  const ParamVector<double> p = init_params(g, 31);
  const Tensor<double> x = random_tensor({1, 28, 28}, 32);
  const Trace<double> trace = forward_trace(g, p, x);

  Rng rng(33);
  double worst = 0;
  for (int trial = 0; trial < 5; ++trial) {
    ParamVector<double> v = ParamVector<double>::zeros_like(p);
    for (Index i = 0; i < v.size(); ++i) v.data[i] = rng.normal();
    v.data /= v.data.norm();
    const Tensor<double> dy = jvp(g, p, trace, v);

    ParamVector<double> shifted = p;
    const double eps = 1e-4;
    shifted.data += eps * v.data;
    const Tensor<double> fp = forward(g, shifted, x);
    shifted.data = p.data - eps * v.data;
    const Tensor<double> fm = forward(g, shifted, x);
    const VecX<double> fd = (fp.data - fm.data) / (2 * eps);
    worst = std::max(worst, (dy.data - fd).norm() / fd.norm());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("duality holds on relu/max-pool networks") {
  ModelConfig cfg;
  cfg.conv_channels = 3;
  cfg.dense_widths = {16};
  const DiffGraph g = build_lenet_variant(cfg);  // relu + max pool defaults
  const ParamVector<double> p = init_params(g, 41);
  const Tensor<double> x = random_tensor({2, 1, 28, 28}, 42);
  const Trace<double> trace = forward_trace(g, p, x);

  Rng rng(43);
  for (int trial = 0; trial < 8; ++trial) {
    ParamVector<double> v = ParamVector<double>::zeros_like(p);
    for (Index i = 0; i < v.size(); ++i) v.data[i] = rng.normal();
    Tensor<double> u = Tensor<double>::zeros(trace.output().shape);
    for (Index i = 0; i < u.size(); ++i) u.data[i] = rng.normal();
    const double lhs = u.data.dot(jvp(g, p, trace, v).data);
    const double rhs = vjp(g, p, trace, u).data.dot(v.data);
    CHECK(std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-12}) < 1e-10);
  }
}

TEST_CASE("jvp is linear in the tangent") {
  const DiffGraph g = build_mlp(4, {6}, 3, ActKind::tanh);
  const ParamVector<double> p = random_params(g, 51);
  const Tensor<double> x = random_tensor({3, 4}, 52);
  const Trace<double> trace = forward_trace(g, p, x);
  ParamVector<double> v1 = random_params(g, 53), v2 = random_params(g, 54);
  ParamVector<double> mix = v1;
  mix.data = 2.5 * v1.data - 0.75 * v2.data;
  const VecX<double> got = jvp(g, p, trace, mix).data;
  const VecX<double> expect =
      2.5 * jvp(g, p, trace, v1).data - 0.75 * jvp(g, p, trace, v2).data;
  CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
}

TEST_CASE("jvp is exact for parameter-linear graphs") {
  const DiffGraph g = make_graph({3}, {Dense{2, true}});
  const ParamVector<double> p = random_params(g, 61);
  const ParamVector<double> v = random_params(g, 62);
  const Tensor<double> x = random_tensor({2, 3}, 63);
  ParamVector<double> moved = p;
  moved.data += v.data;
  const VecX<double> diff = forward(g, moved, x).data - forward(g, p, x).data;
  const VecX<double> dy = jvp(g, p, x, v).data;
  CHECK((dy - diff).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward/jvp/vjp are deterministic") {
  ModelConfig cfg;
  cfg.conv_channels = 3;
  cfg.dense_widths = {16};
  const DiffGraph g = build_lenet_variant(cfg);
  const ParamVector<double> p = init_params(g, 71);
  const Tensor<double> x = random_tensor({2, 1, 28, 28}, 72);
  const Tensor<double> y1 = forward(g, p, x);
  const Tensor<double> y2 = forward(g, p, x);
  CHECK(y1.data == y2.data);
  const ParamVector<double> v = init_params(g, 73);
  CHECK(jvp(g, p, x, v).data == jvp(g, p, x, v).data);
  Tensor<double> u = Tensor<double>::zeros(y1.shape);
  u.data.setOnes();
  CHECK(vjp(g, p, x, u).data == vjp(g, p, x, u).data);
}

TEST_CASE("grad_check reports tiny errors for a linear model and validates input") {
  const DiffGraph g = make_graph({4}, {Dense{3, true}});
  const ParamVector<double> p = random_params(g, 81);
  const Tensor<double> x = random_tensor({2, 4}, 82);
  const GradCheckReport rep = grad_check(g, p, x, 10, 1e-4);
  CHECK(rep.max_duality_gap < 1e-12);
  CHECK(rep.max_rel_jvp < 1e-9);
  CHECK_THROWS_AS(grad_check(g, p, x, 10, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(grad_check(g, p, x, 0, 1e-4), std::invalid_argument);
}

TEST_CASE("error paths carry shape diagnostics") {
  const DiffGraph g = make_graph({2, 8, 8}, {Conv2D{2, 3}, Flatten{}, Dense{4, true}});
  const ParamVector<double> p = random_params(g, 91);

  CHECK_THROWS_WITH_AS(forward(g, p, Tensor<double>::zeros({2, 7, 7})),
                       doctest::Contains("(2,7,7)"), std::invalid_argument);

  ParamVector<double> bad = p;
  bad.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(forward(g, bad, Tensor<double>::zeros({2, 8, 8})),
                       doctest::Contains("non-finite"), std::invalid_argument);

  ParamVector<double> short_tangent;
  short_tangent.data = VecX<double>::Zero(3);
  CHECK_THROWS_AS(jvp(g, p, Tensor<double>::zeros({2, 8, 8}), short_tangent), std::invalid_argument);

  Tensor<double> cot = Tensor<double>::zeros({1, 4});
  cot.data[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(vjp(g, p, Tensor<double>::zeros({2, 8, 8}), cot),
                       doctest::Contains("non-finite"), std::invalid_argument);
  CHECK_THROWS_AS(vjp(g, p, Tensor<double>::zeros({2, 8, 8}), Tensor<double>::zeros({1, 3})),
                  std::invalid_argument);
}

TEST_CASE("graph shape inference rejects broken chains") {
  CHECK_THROWS(make_graph({1, 4, 4}, {Conv2D{2, 5}}));              // kernel larger than input
  CHECK_THROWS(make_graph({1, 8, 8}, {Dense{3, true}}));            // dense on image input
  CHECK_THROWS(make_graph({1, 8, 8}, {Conv2D{2, 3}}));              // non-flat output
  CHECK_THROWS(make_graph({1, 8, 8}, {Conv2D{2, 4, Padding::same}, Flatten{}}));  // even same-pad kernel
  CHECK_NOTHROW(make_graph({1, 8, 8}, {Conv2D{2, 3}, Pool2D{}, Flatten{}, Dense{3, true}}));
}
