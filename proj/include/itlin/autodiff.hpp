#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "itlin/graph.hpp"
#include "itlin/rng.hpp"
#include "itlin/tensor.hpp"

namespace itlin {

// Per-evaluation record of everything the derivative passes reuse: layer
// activations, conv patch matrices and max-pool winner indices. jvp/vjp at
// the same parameters consume one shared trace.
template <class S>
struct Trace {
  Index batch = 0;
  Tensor<S> input;
  std::vector<Tensor<S>> acts;
  std::vector<RowMat<S>> patches;           // conv layers only
  std::vector<std::vector<Index>> winners;  // max-pool layers only

  const Tensor<S>& output() const { return acts.back(); }
};

namespace detail {

struct ConvDims {
  Index cin, h, w, cout, k, pad, oh, ow;
  Index ckk() const { return cin * k * k; }
  Index ohw() const { return oh * ow; }
};

inline ConvDims conv_dims(const Conv2D& c, const Shape& in) {
  ConvDims d;
  d.cin = in[0];
  d.h = in[1];
  d.w = in[2];
  d.cout = c.out_channels;
  d.k = c.kernel;
  d.pad = c.padding == Padding::same ? (c.kernel - 1) / 2 : 0;
  d.oh = c.padding == Padding::same ? d.h : d.h - d.k + 1;
  d.ow = c.padding == Padding::same ? d.w : d.w - d.k + 1;
  return d;
}

template <class S>
void im2col(const ConvDims& d, const S* x, Index batch, RowMat<S>& P) {
  P.resize(batch * d.ohw(), d.ckk());
  const Index plane = d.h * d.w;
  const Index sample = d.cin * plane;
  for (Index n = 0; n < batch; ++n) {
    const S* xn = x + n * sample;
    for (Index oy = 0; oy < d.oh; ++oy) {
      for (Index ox = 0; ox < d.ow; ++ox) {
        S* row = P.data() + ((n * d.oh + oy) * d.ow + ox) * d.ckk();
        const Index ix0 = ox - d.pad;
        for (Index ci = 0; ci < d.cin; ++ci) {
          const S* src = xn + ci * plane;
          for (Index ky = 0; ky < d.k; ++ky) {
            const Index iy = oy + ky - d.pad;
            S* dst = row + (ci * d.k + ky) * d.k;
            if (iy < 0 || iy >= d.h) {
              std::fill(dst, dst + d.k, S(0));
            } else if (ix0 >= 0 && ix0 + d.k <= d.w) {
              const S* s = src + iy * d.w + ix0;
              std::copy(s, s + d.k, dst);
            } else {
              for (Index kx = 0; kx < d.k; ++kx) {
                const Index ix = ix0 + kx;
                dst[kx] = (ix >= 0 && ix < d.w) ? src[iy * d.w + ix] : S(0);
              }
            }
          }
        }
      }
    }
  }
}

template <class S>
void col2im_add(const ConvDims& d, const RowMat<S>& dP, Index batch, S* dx) {
  const Index plane = d.h * d.w;
  const Index sample = d.cin * plane;
  for (Index n = 0; n < batch; ++n) {
    S* xn = dx + n * sample;
    for (Index oy = 0; oy < d.oh; ++oy) {
      for (Index ox = 0; ox < d.ow; ++ox) {
        const S* row = dP.data() + ((n * d.oh + oy) * d.ow + ox) * d.ckk();
        const Index ix0 = ox - d.pad;
        for (Index ci = 0; ci < d.cin; ++ci) {
          S* dst = xn + ci * plane;
          for (Index ky = 0; ky < d.k; ++ky) {
            const Index iy = oy + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            const S* src = row + (ci * d.k + ky) * d.k;
            for (Index kx = 0; kx < d.k; ++kx) {
              const Index ix = ix0 + kx;
              if (ix >= 0 && ix < d.w) dst[iy * d.w + ix] += src[kx];
            }
          }
        }
      }
    }
  }
}

// y_n = W p_n^T (+ bias per output channel)
template <class S>
void conv_apply(const ConvDims& d, const RowMat<S>& P, Index batch, const S* w, const S* b,
                Tensor<S>& out) {
  CMapRowMat<S> W(w, d.cout, d.ckk());
  for (Index n = 0; n < batch; ++n) {
    MapRowMat<S> on(out.data.data() + n * d.cout * d.ohw(), d.cout, d.ohw());
    on.noalias() = W * P.middleRows(n * d.ohw(), d.ohw()).transpose();
    if (b) on.colwise() += CMapVec<S>(b, d.cout);
  }
}

inline void pool_dims(const Pool2D& p, const Shape& in, Index& oh, Index& ow) {
  oh = (in[1] - p.window) / p.stride + 1;
  ow = (in[2] - p.window) / p.stride + 1;
}

// Ties pick the lowest flat index; the winner map is frozen with the trace so
// jvp/vjp stay consistent with this forward evaluation.
template <class S>
void maxpool_forward(const Pool2D& p, const Shape& in, Index batch, const Tensor<S>& x,
                     Tensor<S>& out, std::vector<Index>& winners) {
  const Index c = in[0], h = in[1], w = in[2];
  Index oh, ow;
  pool_dims(p, in, oh, ow);
  winners.resize(batch * c * oh * ow);
  Index j = 0;
  for (Index n = 0; n < batch; ++n) {
    for (Index ci = 0; ci < c; ++ci) {
      const Index base = (n * c + ci) * h * w;
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          Index best = base + (oy * p.stride) * w + ox * p.stride;
          S bv = x.data[best];
          for (Index ky = 0; ky < p.window; ++ky) {
            for (Index kx = 0; kx < p.window; ++kx) {
              const Index idx = base + (oy * p.stride + ky) * w + (ox * p.stride + kx);
              if (x.data[idx] > bv) {
                bv = x.data[idx];
                best = idx;
              }
            }
          }
          out.data[j] = bv;
          winners[j] = best;
          ++j;
        }
      }
    }
  }
}

template <class S>
void avgpool_forward(const Pool2D& p, const Shape& in, Index batch, const Tensor<S>& x, Tensor<S>& out) {
  const Index c = in[0], h = in[1], w = in[2];
  Index oh, ow;
  pool_dims(p, in, oh, ow);
  const S inv = S(1) / S(p.window * p.window);
  Index j = 0;
  for (Index n = 0; n < batch; ++n) {
    for (Index ci = 0; ci < c; ++ci) {
      const Index base = (n * c + ci) * h * w;
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          S acc = S(0);
          for (Index ky = 0; ky < p.window; ++ky)
            for (Index kx = 0; kx < p.window; ++kx)
              acc += x.data[base + (oy * p.stride + ky) * w + (ox * p.stride + kx)];
          out.data[j++] = acc * inv;
        }
      }
    }
  }
}

template <class S>
void avgpool_backward(const Pool2D& p, const Shape& in, Index batch, const Tensor<S>& gy, Tensor<S>& gx) {
  const Index c = in[0], h = in[1], w = in[2];
  Index oh, ow;
  pool_dims(p, in, oh, ow);
  const S inv = S(1) / S(p.window * p.window);
  Index j = 0;
  for (Index n = 0; n < batch; ++n) {
    for (Index ci = 0; ci < c; ++ci) {
      const Index base = (n * c + ci) * h * w;
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          const S v = gy.data[j++] * inv;
          for (Index ky = 0; ky < p.window; ++ky)
            for (Index kx = 0; kx < p.window; ++kx)
              gx.data[base + (oy * p.stride + ky) * w + (ox * p.stride + kx)] += v;
        }
      }
    }
  }
}

inline Shape batched(const Shape& per_example, Index batch) {
  Shape s;
  s.reserve(per_example.size() + 1);
  s.push_back(batch);
  s.insert(s.end(), per_example.begin(), per_example.end());
  return s;
}

inline Index resolve_batch(const DiffGraph& g, const Shape& in) {
  if (in == g.input_shape) return 1;
  if (in.size() == g.input_shape.size() + 1 &&
      std::equal(g.input_shape.begin(), g.input_shape.end(), in.begin() + 1))
    return in[0];
  throw std::invalid_argument("forward: input shape " + shape_str(in) + " does not match graph input " +
                              shape_str(g.input_shape) + " (leading batch axis allowed)");
}

template <class S>
void check_params(const DiffGraph& g, const ParamVector<S>& params, const char* who) {
  if (params.size() != g.param_count)
    throw std::invalid_argument(std::string(who) + ": parameter vector has " + std::to_string(params.size()) +
                                " entries, graph expects " + std::to_string(g.param_count));
  if (!params.all_finite()) throw std::invalid_argument(std::string(who) + ": non-finite parameters");
}

// One forward evaluation; when `trace` is non-null every intermediate needed
// by the derivative passes is retained, otherwise buffers roll.
template <class S>
Tensor<S> forward_impl(const DiffGraph& g, const ParamVector<S>& params, const Tensor<S>& input,
                       Trace<S>* trace) {
  const Index batch = resolve_batch(g, input.shape);
  check_params(g, params, "forward");

  const Index n_layers = static_cast<Index>(g.layers.size());
  if (trace) {
    trace->batch = batch;
    trace->input = input;
    trace->acts.resize(n_layers);
    trace->patches.assign(n_layers, RowMat<S>());
    trace->winners.assign(n_layers, {});
  }

  Tensor<S> cur = input;
  RowMat<S> scratch;
  std::vector<Index> win_scratch;
  Shape in_shape = g.input_shape;
  for (Index li = 0; li < n_layers; ++li) {
    const Layer& l = g.layers[li];
    Tensor<S> out = Tensor<S>::zeros(batched(g.layer_output[li], batch));
    if (const auto* c = std::get_if<Conv2D>(&l)) {
      const ConvDims d = conv_dims(*c, in_shape);
      RowMat<S>& P = trace ? trace->patches[li] : scratch;
      im2col(d, cur.data.data(), batch, P);
      const auto slots = layer_slots(g, li);
      conv_apply(d, P, batch, params.data.data() + slots[0]->offset,
                 params.data.data() + slots[1]->offset, out);
    } else if (const auto* p = std::get_if<Pool2D>(&l)) {
      if (p->kind == PoolKind::max) {
        std::vector<Index>& w = trace ? trace->winners[li] : win_scratch;
        maxpool_forward(*p, in_shape, batch, cur, out, w);
      } else {
        avgpool_forward(*p, in_shape, batch, cur, out);
      }
    } else if (const auto* dn = std::get_if<Dense>(&l)) {
      const auto slots = layer_slots(g, li);
      const Index fin = in_shape[0];
      CMapRowMat<S> W(params.data.data() + slots[0]->offset, dn->out, fin);
      CMapRowMat<S> X(cur.data.data(), batch, fin);
      MapRowMat<S> Y(out.data.data(), batch, dn->out);
      Y.noalias() = X * W.transpose();
      if (dn->bias) Y.rowwise() += CMapVec<S>(params.data.data() + slots[1]->offset, dn->out).transpose();
    } else if (const auto* a = std::get_if<Activation>(&l)) {
      if (a->kind == ActKind::relu)
        out.data = cur.data.cwiseMax(S(0));
      else
        out.data = cur.data.array().tanh().matrix();
    } else {
      out.data = cur.data;  // flatten: same bytes, new shape
    }
    if (trace) trace->acts[li] = out;
    cur = std::move(out);
    in_shape = g.layer_output[li];
  }
  return cur;
}

}  // namespace detail

template <class S>
Tensor<S> forward(const DiffGraph& g, const ParamVector<S>& params, const Tensor<S>& input) {
  return detail::forward_impl<S>(g, params, input, nullptr);
}

template <class S>
Trace<S> forward_trace(const DiffGraph& g, const ParamVector<S>& params, const Tensor<S>& input) {
  Trace<S> t;
  detail::forward_impl<S>(g, params, input, &t);
  return t;
}

// Forward-mode directional derivative in parameter space evaluated at the
// trace's parameters: returns d/de f(params + e*tangent, x) at e=0, exactly.
template <class S>
Tensor<S> jvp(const DiffGraph& g, const ParamVector<S>& params, const Trace<S>& trace,
              const ParamVector<S>& tangent) {
  detail::check_params(g, params, "jvp");
  if (tangent.size() != g.param_count)
    throw std::invalid_argument("jvp: tangent has " + std::to_string(tangent.size()) +
                                " entries, graph expects " + std::to_string(g.param_count));
  if (!tangent.all_finite()) throw std::invalid_argument("jvp: non-finite tangent");

  const Index batch = trace.batch;
  const Index n_layers = static_cast<Index>(g.layers.size());
  Tensor<S> dcur;  // tangent of the current activation; empty means exact zero
  RowMat<S> dpatches;
  Shape in_shape = g.input_shape;
  for (Index li = 0; li < n_layers; ++li) {
    const Layer& l = g.layers[li];
    const Tensor<S>& x = li == 0 ? trace.input : trace.acts[li - 1];
    Tensor<S> dout = Tensor<S>::zeros(detail::batched(g.layer_output[li], batch));
    if (const auto* c = std::get_if<Conv2D>(&l)) {
      const detail::ConvDims d = detail::conv_dims(*c, in_shape);
      const auto slots = layer_slots(g, li);
      CMapRowMat<S> dW(tangent.data.data() + slots[0]->offset, d.cout, d.ckk());
      CMapVec<S> db(tangent.data.data() + slots[1]->offset, d.cout);
      if (dcur.size() > 0) detail::im2col(d, dcur.data.data(), batch, dpatches);
      for (Index n = 0; n < batch; ++n) {
        MapRowMat<S> on(dout.data.data() + n * d.cout * d.ohw(), d.cout, d.ohw());
        on.noalias() = dW * trace.patches[li].middleRows(n * d.ohw(), d.ohw()).transpose();
        if (dcur.size() > 0) {
          CMapRowMat<S> W(params.data.data() + slots[0]->offset, d.cout, d.ckk());
          on.noalias() += W * dpatches.middleRows(n * d.ohw(), d.ohw()).transpose();
        }
        on.colwise() += db;
      }
    } else if (const auto* p = std::get_if<Pool2D>(&l)) {
      if (dcur.size() > 0) {
        if (p->kind == PoolKind::max) {
          const std::vector<Index>& w = trace.winners[li];
          for (std::size_t j = 0; j < w.size(); ++j) dout.data[static_cast<Index>(j)] = dcur.data[w[j]];
        } else {
          detail::avgpool_forward(*p, in_shape, batch, dcur, dout);
        }
      }
    } else if (const auto* dn = std::get_if<Dense>(&l)) {
      const auto slots = layer_slots(g, li);
      const Index fin = in_shape[0];
      CMapRowMat<S> dW(tangent.data.data() + slots[0]->offset, dn->out, fin);
      CMapRowMat<S> X(x.data.data(), batch, fin);
      MapRowMat<S> dY(dout.data.data(), batch, dn->out);
      dY.noalias() = X * dW.transpose();
      if (dcur.size() > 0) {
        CMapRowMat<S> W(params.data.data() + slots[0]->offset, dn->out, fin);
        CMapRowMat<S> dX(dcur.data.data(), batch, fin);
        dY.noalias() += dX * W.transpose();
      }
      if (dn->bias) dY.rowwise() += CMapVec<S>(tangent.data.data() + slots[1]->offset, dn->out).transpose();
    } else if (const auto* a = std::get_if<Activation>(&l)) {
      if (dcur.size() > 0) {
        if (a->kind == ActKind::relu) {
          dout.data = (x.data.array() > S(0)).select(dcur.data.array(), S(0)).matrix();
        } else {
          const auto y = trace.acts[li].data.array();
          dout.data = (dcur.data.array() * (S(1) - y * y)).matrix();
        }
      }
    } else {
      if (dcur.size() > 0) dout.data = dcur.data;
    }
    dcur = std::move(dout);
    in_shape = g.layer_output[li];
  }
  return dcur;
}

template <class S>
Tensor<S> jvp(const DiffGraph& g, const ParamVector<S>& params, const Tensor<S>& input,
              const ParamVector<S>& tangent) {
  const Trace<S> t = forward_trace(g, params, input);
  return jvp(g, params, t, tangent);
}

// Reverse mode: cotangent-weighted parameter gradient, summed over batch and
// output dimensions.
template <class S>
ParamVector<S> vjp(const DiffGraph& g, const ParamVector<S>& params, const Trace<S>& trace,
                   const Tensor<S>& cotangent) {
  detail::check_params(g, params, "vjp");
  const Tensor<S>& out = trace.output();
  if (cotangent.data.size() != out.data.size())
    throw std::invalid_argument("vjp: cotangent shape " + shape_str(cotangent.shape) +
                                " does not match output " + shape_str(out.shape));
  if (!cotangent.all_finite()) throw std::invalid_argument("vjp: non-finite cotangent");

  ParamVector<S> grad;
  grad.data = VecX<S>::Zero(g.param_count);
  grad.layout = g.layout;

  const Index batch = trace.batch;
  const Index n_layers = static_cast<Index>(g.layers.size());
  Tensor<S> gcur = cotangent;
  for (Index li = n_layers - 1; li >= 0; --li) {
    const Layer& l = g.layers[li];
    const Tensor<S>& x = li == 0 ? trace.input : trace.acts[li - 1];
    const Shape in_shape = li == 0 ? g.input_shape : g.layer_output[li - 1];
    const bool want_gx = li > 0;
    Tensor<S> gx;
    if (const auto* c = std::get_if<Conv2D>(&l)) {
      const detail::ConvDims d = detail::conv_dims(*c, in_shape);
      const auto slots = layer_slots(g, li);
      MapRowMat<S> dW(grad.data.data() + slots[0]->offset, d.cout, d.ckk());
      MapVec<S> db(grad.data.data() + slots[1]->offset, d.cout);
      RowMat<S> dP;
      if (want_gx) {
        gx = Tensor<S>::zeros(detail::batched(in_shape, batch));
        dP.resize(d.ohw(), d.ckk());
      }
      CMapRowMat<S> W(params.data.data() + slots[0]->offset, d.cout, d.ckk());
      for (Index n = 0; n < batch; ++n) {
        CMapRowMat<S> gn(gcur.data.data() + n * d.cout * d.ohw(), d.cout, d.ohw());
        dW.noalias() += gn * trace.patches[li].middleRows(n * d.ohw(), d.ohw());
        db += gn.rowwise().sum();
        if (want_gx) {
          dP.noalias() = gn.transpose() * W;
          detail::col2im_add(d, dP, 1, gx.data.data() + n * d.cin * d.h * d.w);
        }
      }
    } else if (const auto* p = std::get_if<Pool2D>(&l)) {
      if (want_gx) {
        gx = Tensor<S>::zeros(detail::batched(in_shape, batch));
        if (p->kind == PoolKind::max) {
          const std::vector<Index>& w = trace.winners[li];
          for (std::size_t j = 0; j < w.size(); ++j) gx.data[w[j]] += gcur.data[static_cast<Index>(j)];
        } else {
          detail::avgpool_backward(*p, in_shape, batch, gcur, gx);
        }
      }
    } else if (const auto* dn = std::get_if<Dense>(&l)) {
      const auto slots = layer_slots(g, li);
      const Index fin = in_shape[0];
      CMapRowMat<S> G(gcur.data.data(), batch, dn->out);
      CMapRowMat<S> X(x.data.data(), batch, fin);
      MapRowMat<S> dW(grad.data.data() + slots[0]->offset, dn->out, fin);
      dW.noalias() += G.transpose() * X;
      if (dn->bias) {
        MapVec<S> db(grad.data.data() + slots[1]->offset, dn->out);
        db += G.colwise().sum().transpose();
      }
      if (want_gx) {
        gx = Tensor<S>::zeros(detail::batched(in_shape, batch));
        CMapRowMat<S> W(params.data.data() + slots[0]->offset, dn->out, fin);
        MapRowMat<S> GX(gx.data.data(), batch, fin);
        GX.noalias() = G * W;
      }
    } else if (const auto* a = std::get_if<Activation>(&l)) {
      if (want_gx) {
        gx = Tensor<S>::zeros(detail::batched(in_shape, batch));
        if (a->kind == ActKind::relu) {
          gx.data = (x.data.array() > S(0)).select(gcur.data.array(), S(0)).matrix();
        } else {
          const auto y = trace.acts[li].data.array();
          gx.data = (gcur.data.array() * (S(1) - y * y)).matrix();
        }
      }
    } else {
      if (want_gx) {
        gx = Tensor<S>::zeros(detail::batched(in_shape, batch));
        gx.data = gcur.data;
      }
    }
    if (!want_gx) break;
    gcur = std::move(gx);
  }
  return grad;
}

template <class S>
ParamVector<S> vjp(const DiffGraph& g, const ParamVector<S>& params, const Tensor<S>& input,
                   const Tensor<S>& cotangent) {
  const Trace<S> t = forward_trace(g, params, input);
  return vjp(g, params, t, cotangent);
}

struct GradCheckReport {
  double max_rel_jvp = 0.0;   // jvp against central differences
  double max_rel_vjp = 0.0;   // directional vjp against central differences
  double max_duality_gap = 0.0;
  int trials = 0;
};

// Randomised finite-difference verification of both derivative modes plus the
// duality identity <u, jvp(v)> = <vjp(u), v>.
template <class S>
GradCheckReport grad_check(const DiffGraph& g, const ParamVector<S>& params, const Tensor<S>& input,
                           int trials, double epsilon, std::uint64_t seed = 0) {
  if (trials < 1) throw std::invalid_argument("grad_check: trials must be >= 1");
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be > 0");

  Rng rng(seed);
  const Trace<S> trace = forward_trace(g, params, input);
  const Index out_n = trace.output().size();

  GradCheckReport rep;
  rep.trials = trials;
  for (int t = 0; t < trials; ++t) {
    ParamVector<S> v = ParamVector<S>::zeros_like(params);
    for (Index i = 0; i < v.size(); ++i) v.data[i] = static_cast<S>(rng.normal());
    v.data /= v.data.norm();
    Tensor<S> u = Tensor<S>::zeros(trace.output().shape);
    for (Index i = 0; i < out_n; ++i) u.data[i] = static_cast<S>(rng.normal());
    u.data /= u.data.norm();

    ParamVector<S> shifted = params;
    shifted.data += static_cast<S>(epsilon) * v.data;
    const Tensor<S> fp = forward(g, shifted, input);
    shifted.data = params.data - static_cast<S>(epsilon) * v.data;
    const Tensor<S> fm = forward(g, shifted, input);
    VecX<S> fd = (fp.data - fm.data) / static_cast<S>(2.0 * epsilon);

    const Tensor<S> jv = jvp(g, params, trace, v);
    const ParamVector<S> vu = vjp(g, params, trace, u);

    const double fd_norm = static_cast<double>(fd.norm());
    const double rel_jvp = static_cast<double>((jv.data - fd).norm()) / std::max(fd_norm, 1e-12);
    const double u_jv = static_cast<double>(u.data.dot(jv.data));
    const double vu_v = static_cast<double>(vu.data.dot(v.data));
    const double u_fd = static_cast<double>(u.data.dot(fd));
    const double scale = std::max({std::abs(u_jv), std::abs(vu_v), 1e-12});
    const double rel_vjp = std::abs(vu_v - u_fd) / std::max(std::abs(u_fd), 1e-12);
    const double duality = std::abs(u_jv - vu_v) / scale;

    rep.max_rel_jvp = std::max(rep.max_rel_jvp, rel_jvp);
    rep.max_rel_vjp = std::max(rep.max_rel_vjp, rel_vjp);
    rep.max_duality_gap = std::max(rep.max_duality_gap, duality);
  }
  return rep;
}

}  // namespace itlin
