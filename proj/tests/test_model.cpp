#include "doctest.h"

#include <cmath>

#include "itlin/autodiff.hpp"
#include "itlin/model.hpp"

using namespace itlin;

// Any change to this constant is a breaking change to the default MNIST
// architecture (50-channel conv blocks, 500-wide dense, 10 classes).
constexpr Index kDefaultMnistParamCount = 469360;

TEST_CASE("lenet variant: mnist config produces (batch, 10) logits") {
  ModelConfig cfg;  // defaults: 1x28x28, channels 50
  const DiffGraph g = build_lenet_variant(cfg);
  CHECK(g.output_dim == 10);
  CHECK(g.param_count == kDefaultMnistParamCount);
  const ParamVector<double> p = init_params(g, 1);
  const Tensor<double> y = forward(g, p, Tensor<double>::zeros({3, 1, 28, 28}));
  CHECK(y.shape == Shape{3, 10});
}

TEST_CASE("lenet variant: single-channel toy matches hand-computed parameter count") {
  ModelConfig cfg;
  cfg.conv_channels = 1;
  const DiffGraph g = build_lenet_variant(cfg);
  // conv1: 1*(1*5*5)+1 = 26; conv2: 1*(1*5*5)+1 = 26; spatial chain
  // 28->24->12->8->4 so flatten = 16; dense1: 16*500+500 = 8500;
  // logits: 500*10+10 = 5010.
  CHECK(g.param_count == 26 + 26 + 8500 + 5010);
}

TEST_CASE("lenet variant: cifar-shaped input infers cleanly") {
  ModelConfig cfg;
  cfg.input = {3, 32, 32};
  const DiffGraph g = build_lenet_variant(cfg);
  const ParamVector<double> p = init_params(g, 2);
  const Tensor<double> y = forward(g, p, Tensor<double>::zeros({2, 3, 32, 32}));
  CHECK(y.shape == Shape{2, 10});
}

TEST_CASE("lenet variant: invalid configs are rejected") {
  ModelConfig cfg;
  cfg.conv_channels = 0;
  CHECK_THROWS_AS(build_lenet_variant(cfg), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.classes = 1;
  CHECK_THROWS_AS(build_lenet_variant(cfg), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.input = {1, 8, 8};  // second conv block cannot fit
  CHECK_THROWS_AS(build_lenet_variant(cfg), std::invalid_argument);
}

TEST_CASE("init: deterministic in the seed, biases zero") {
  const DiffGraph g = build_mlp(8, {16}, 4);
  const ParamVector<double> a = init_params(g, 42);
  const ParamVector<double> b = init_params(g, 42);
  CHECK(a.data == b.data);

  const ParamVector<double> c = init_params(g, 43);
  Index differing = 0, weight_count = 0;
  for (const ParamSlot& s : *g.layout) {
    if (s.name == "bias") {
      CHECK(a.data.segment(s.offset, s.size).cwiseAbs().maxCoeff() == 0.0);
    } else {
      weight_count += s.size;
      for (Index i = 0; i < s.size; ++i)
        if (a.data[s.offset + i] != c.data[s.offset + i]) ++differing;
    }
  }
  CHECK(differing >= (99 * weight_count) / 100);
}

TEST_CASE("init: fan-in normal std within 5% on a large layer") {
  const DiffGraph g = build_mlp(800, {500}, 10);
  const ParamVector<double> p = init_params(g, 7);
  const ParamSlot& w = (*g.layout)[0];  // 500 x 800 weight
  REQUIRE(w.shape == Shape{500, 800});
  const auto seg = p.data.segment(w.offset, w.size);
  const double mean = seg.mean();
  const double std = std::sqrt((seg.array() - mean).square().sum() / static_cast<double>(seg.size()));
  const double expected = 1.0 / std::sqrt(800.0);
  CHECK(std == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("init: uniform scheme matches the fan-in variance") {
  const DiffGraph g = build_mlp(400, {200}, 4);
  const ParamVector<double> p = init_params(g, 9, InitScheme::fan_in_uniform);
  const ParamSlot& w = (*g.layout)[0];
  const auto seg = p.data.segment(w.offset, w.size);
  const double bound = std::sqrt(3.0 / 400.0);
  CHECK(seg.maxCoeff() <= bound);
  CHECK(seg.minCoeff() >= -bound);
  const double std = std::sqrt(seg.array().square().sum() / static_cast<double>(seg.size()));
  CHECK(std == doctest::Approx(1.0 / std::sqrt(400.0)).epsilon(0.05));
}

TEST_CASE("init: unknown scheme name rejected") {
  CHECK_THROWS_AS(parse_init_scheme("xavier"), std::invalid_argument);
  CHECK(parse_init_scheme("fan_in_normal") == InitScheme::fan_in_normal);
  CHECK(parse_init_scheme("uniform") == InitScheme::fan_in_uniform);
}
