#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "itlin/graph.hpp"
#include "itlin/rng.hpp"
#include "itlin/tensor.hpp"

namespace itlin {

enum class InitScheme { fan_in_normal, fan_in_uniform };

struct ModelConfig {
  Index conv_channels = 50;
  Index kernel_size = 5;
  PoolKind pooling = PoolKind::max;
  std::vector<Index> dense_widths = {500};
  ActKind activation = ActKind::relu;
  Shape input = {1, 28, 28};
  Index classes = 10;
  InitScheme init = InitScheme::fan_in_normal;
  std::uint64_t seed = 0;
};

inline void validate(const ModelConfig& cfg) {
  if (cfg.conv_channels < 1) throw std::invalid_argument("model: conv_channels must be >= 1");
  if (cfg.classes < 2) throw std::invalid_argument("model: classes must be >= 2");
  if (cfg.kernel_size < 1) throw std::invalid_argument("model: kernel_size must be >= 1");
  if (cfg.input.size() != 3) throw std::invalid_argument("model: input shape must be (C,H,W)");
}

// conv-act-pool, conv-act-pool, flatten, dense-act per hidden width, dense(c).
// The output layer emits raw logits; softmax lives in the loss.
inline DiffGraph build_lenet_variant(const ModelConfig& cfg) {
  validate(cfg);
  std::vector<Layer> layers;
  for (int block = 0; block < 2; ++block) {
    layers.push_back(Conv2D{cfg.conv_channels, cfg.kernel_size, Padding::valid});
    layers.push_back(Activation{cfg.activation});
    layers.push_back(Pool2D{cfg.pooling, 2, 2});
  }
  layers.push_back(Flatten{});
  for (Index w : cfg.dense_widths) {
    layers.push_back(Dense{w, true});
    layers.push_back(Activation{cfg.activation});
  }
  layers.push_back(Dense{cfg.classes, true});
  return make_graph(cfg.input, std::move(layers));
}

// Fully-connected test architecture: dim -> hidden... -> outputs.
inline DiffGraph build_mlp(Index input_dim, const std::vector<Index>& hidden, Index outputs,
                           ActKind activation = ActKind::tanh, bool bias = true) {
  std::vector<Layer> layers;
  for (Index w : hidden) {
    layers.push_back(Dense{w, bias});
    layers.push_back(Activation{activation});
  }
  layers.push_back(Dense{outputs, bias});
  return make_graph({input_dim}, std::move(layers));
}

inline Index fan_in_of(const DiffGraph& g, const ParamSlot& slot) {
  const Layer& l = g.layers[slot.layer];
  if (std::holds_alternative<Conv2D>(l)) return slot.shape[1] * slot.shape[2] * slot.shape[3];
  return slot.shape[1];
}

// Weights ~ fan-in-scaled (std = 1/sqrt(fan_in)); biases zero. Deterministic
// in the seed, independent of platform RNG details.
template <class S = double>
ParamVector<S> init_params(const DiffGraph& g, std::uint64_t seed,
                           InitScheme scheme = InitScheme::fan_in_normal) {
  ParamVector<S> p;
  p.data = VecX<S>::Zero(g.param_count);
  p.layout = g.layout;
  Rng rng(seed);
  for (const ParamSlot& slot : *g.layout) {
    if (slot.name != "weight") continue;  // biases stay zero
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in_of(g, slot)));
    auto seg = p.data.segment(slot.offset, slot.size);
    if (scheme == InitScheme::fan_in_normal) {
      for (Index i = 0; i < slot.size; ++i) seg[i] = static_cast<S>(scale * rng.normal());
    } else {
      const double bound = scale * std::sqrt(3.0);
      for (Index i = 0; i < slot.size; ++i) seg[i] = static_cast<S>(rng.uniform(-bound, bound));
    }
  }
  return p;
}

inline InitScheme parse_init_scheme(const std::string& name) {
  if (name == "fan_in_normal" || name == "normal") return InitScheme::fan_in_normal;
  if (name == "fan_in_uniform" || name == "uniform") return InitScheme::fan_in_uniform;
  throw std::invalid_argument("unknown init scheme '" + name + "' (fan_in_normal | fan_in_uniform)");
}

}  // namespace itlin
