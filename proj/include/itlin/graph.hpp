#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "itlin/tensor.hpp"

namespace itlin {

enum class Padding { valid, same };
enum class PoolKind { max, avg };
enum class ActKind { relu, tanh };

struct Conv2D {
  Index out_channels = 1;
  Index kernel = 5;
  Padding padding = Padding::valid;
};

struct Pool2D {
  PoolKind kind = PoolKind::max;
  Index window = 2;
  Index stride = 2;
};

struct Dense {
  Index out = 1;
  bool bias = true;
};

struct Activation {
  ActKind kind = ActKind::relu;
};

struct Flatten {};

using Layer = std::variant<Conv2D, Pool2D, Dense, Activation, Flatten>;

inline const char* layer_name(const Layer& l) {
  switch (l.index()) {
    case 0: return "conv2d";
    case 1: return "pool2d";
    case 2: return "dense";
    case 3: return "activation";
    default: return "flatten";
  }
}

// Feed-forward computation graph over the supported layer set. Construction
// runs shape inference end-to-end and freezes the parameter layout.
struct DiffGraph {
  Shape input_shape;                // per-example, no batch axis
  std::vector<Layer> layers;
  std::vector<Shape> layer_output;  // per-example output shape of each layer
  std::shared_ptr<const ParamLayout> layout;
  Index param_count = 0;
  Index output_dim = 0;             // c

  const Shape& output_shape() const { return layer_output.back(); }
};

namespace detail {

inline Shape infer_conv(const Conv2D& c, const Shape& in, Index li) {
  if (in.size() != 3)
    throw std::invalid_argument("layer " + std::to_string(li) + " (conv2d): needs (C,H,W) input, got " +
                                shape_str(in));
  if (c.out_channels < 1 || c.kernel < 1)
    throw std::invalid_argument("layer " + std::to_string(li) + " (conv2d): bad channels/kernel");
  const Index h = in[1], w = in[2];
  if (c.padding == Padding::valid) {
    if (c.kernel > h || c.kernel > w)
      throw std::invalid_argument("layer " + std::to_string(li) + " (conv2d): kernel " +
                                  std::to_string(c.kernel) + " exceeds input " + shape_str(in));
    return {c.out_channels, h - c.kernel + 1, w - c.kernel + 1};
  }
  if (c.kernel % 2 == 0)
    throw std::invalid_argument("layer " + std::to_string(li) + " (conv2d): same padding needs odd kernel");
  return {c.out_channels, h, w};
}

inline Shape infer_pool(const Pool2D& p, const Shape& in, Index li) {
  if (in.size() != 3)
    throw std::invalid_argument("layer " + std::to_string(li) + " (pool2d): needs (C,H,W) input, got " +
                                shape_str(in));
  if (p.window < 1 || p.stride < 1)
    throw std::invalid_argument("layer " + std::to_string(li) + " (pool2d): bad window/stride");
  if (in[1] < p.window || in[2] < p.window)
    throw std::invalid_argument("layer " + std::to_string(li) + " (pool2d): window exceeds input " +
                                shape_str(in));
  const Index oh = (in[1] - p.window) / p.stride + 1;
  const Index ow = (in[2] - p.window) / p.stride + 1;
  return {in[0], oh, ow};
}

}  // namespace detail

inline DiffGraph make_graph(Shape input_shape, std::vector<Layer> layers) {
  if (layers.empty()) throw std::invalid_argument("graph: no layers");
  DiffGraph g;
  g.input_shape = std::move(input_shape);
  g.layers = std::move(layers);
  g.layer_output.reserve(g.layers.size());

  auto layout = std::make_shared<ParamLayout>();
  Shape cur = g.input_shape;
  Index offset = 0;
  for (Index li = 0; li < static_cast<Index>(g.layers.size()); ++li) {
    const Layer& l = g.layers[li];
    if (const auto* c = std::get_if<Conv2D>(&l)) {
      const Shape out = detail::infer_conv(*c, cur, li);
      const Index cin = cur[0];
      ParamSlot w{li, "weight", {c->out_channels, cin, c->kernel, c->kernel}, offset, 0};
      w.size = numel(w.shape);
      offset += w.size;
      layout->push_back(std::move(w));
      ParamSlot b{li, "bias", {c->out_channels}, offset, c->out_channels};
      offset += b.size;
      layout->push_back(std::move(b));
      cur = out;
    } else if (const auto* p = std::get_if<Pool2D>(&l)) {
      cur = detail::infer_pool(*p, cur, li);
    } else if (const auto* d = std::get_if<Dense>(&l)) {
      if (cur.size() != 1)
        throw std::invalid_argument("layer " + std::to_string(li) + " (dense): needs flat input, got " +
                                    shape_str(cur) + " (insert flatten)");
      if (d->out < 1) throw std::invalid_argument("layer " + std::to_string(li) + " (dense): bad width");
      ParamSlot w{li, "weight", {d->out, cur[0]}, offset, d->out * cur[0]};
      offset += w.size;
      layout->push_back(std::move(w));
      if (d->bias) {
        ParamSlot b{li, "bias", {d->out}, offset, d->out};
        offset += b.size;
        layout->push_back(std::move(b));
      }
      cur = {d->out};
    } else if (std::holds_alternative<Activation>(l)) {
      // shape preserved
    } else {
      cur = {numel(cur)};
    }
    g.layer_output.push_back(cur);
  }

  if (cur.size() != 1)
    throw std::invalid_argument("graph: output must be a flat logits vector, got " + shape_str(cur));
  g.output_dim = cur[0];
  g.param_count = offset;
  g.layout = std::move(layout);
  return g;
}

// Slots of one layer, in declaration order (weight then bias).
inline std::vector<const ParamSlot*> layer_slots(const DiffGraph& g, Index layer) {
  std::vector<const ParamSlot*> out;
  for (const ParamSlot& s : *g.layout)
    if (s.layer == layer) out.push_back(&s);
  return out;
}

}  // namespace itlin
