#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "itlin/autodiff.hpp"
#include "itlin/graph.hpp"
#include "itlin/tensor.hpp"

namespace itlin {

enum class KernelMode { scalar, block };

// Gram matrix of per-example parameter Jacobians over a probe set.
// scalar mode: m x m entries summed over output dimensions;
// block mode: (m*c) x (m*c) with rows/cols ordered probe-major (i*c + k).
template <class S>
struct KernelMatrix {
  KernelMode mode = KernelMode::scalar;
  Index m = 0;
  Index c = 0;
  MatX<S> theta;
  std::uint64_t probe_id = 0;
  std::uint64_t step = 0;
  std::uint64_t anchor_id = 0;
};

struct KernelOptions {
  Index probe_cap_scalar = 512;
  Index probe_cap_block = 64;
  Index materialise_threshold = 100000;  // p above this switches to jvp-pass evaluation
};

namespace detail {

template <class S>
std::uint64_t probe_hash(const Tensor<S>& probe) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the raw probe bytes
  const auto* bytes = reinterpret_cast<const unsigned char*>(probe.data.data());
  const std::size_t n = static_cast<std::size_t>(probe.data.size()) * sizeof(S);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

template <class S>
Tensor<S> probe_example(const DiffGraph& g, const Tensor<S>& probe, Index i) {
  const Index per = numel(g.input_shape);
  Tensor<S> x;
  x.shape = g.input_shape;
  x.data = probe.data.segment(i * per, per);
  return x;
}

// Per-example Jacobian rows for probes [lo, hi): block rows (i,k) ordered
// probe-major, each of length p.
template <class S>
MatX<S> jacobian_rows(const DiffGraph& g, const ParamVector<S>& params, const Tensor<S>& probe,
                      Index lo, Index hi) {
  const Index c = g.output_dim;
  MatX<S> J((hi - lo) * c, g.param_count);
  for (Index i = lo; i < hi; ++i) {
    const Tensor<S> x = probe_example(g, probe, i);
    const Trace<S> trace = forward_trace(g, params, x);
    Tensor<S> e = Tensor<S>::zeros(trace.output().shape);
    for (Index k = 0; k < c; ++k) {
      e.data.setZero();
      e.data[k] = S(1);
      J.row((i - lo) * c + k) = vjp(g, params, trace, e).data.transpose();
    }
  }
  return J;
}

}  // namespace detail

template <class S>
KernelMatrix<S> empirical_ntk(const DiffGraph& g, const ParamVector<S>& params, const Tensor<S>& probe,
                              KernelMode mode, const KernelOptions& opts = {}) {
  detail::check_params(g, params, "empirical_ntk");
  const Index m = detail::resolve_batch(g, probe.shape);
  const Index cap = mode == KernelMode::scalar ? opts.probe_cap_scalar : opts.probe_cap_block;
  if (m > cap)
    throw std::invalid_argument("empirical_ntk: probe size " + std::to_string(m) + " exceeds cap " +
                                std::to_string(cap));
  const Index c = g.output_dim;
  const Index rows = mode == KernelMode::scalar ? m : m * c;

  KernelMatrix<S> K;
  K.mode = mode;
  K.m = m;
  K.c = c;
  K.probe_id = detail::probe_hash(probe);
  K.theta = MatX<S>::Zero(rows, rows);

  if (g.param_count <= opts.materialise_threshold) {
    // Explicit per-example gradient rows, Gram by chunked pairwise products.
    const Index chunk = 64;
    for (Index alo = 0; alo < m; alo += chunk) {
      const Index ahi = std::min(m, alo + chunk);
      const MatX<S> Ja = detail::jacobian_rows(g, params, probe, alo, ahi);
      for (Index blo = alo; blo < m; blo += chunk) {
        const Index bhi = std::min(m, blo + chunk);
        const MatX<S> Jb = blo == alo ? Ja : detail::jacobian_rows(g, params, probe, blo, bhi);
        const MatX<S> G = Ja * Jb.transpose();  // ((ahi-alo)*c) x ((bhi-blo)*c)
        if (mode == KernelMode::block) {
          K.theta.block(alo * c, blo * c, G.rows(), G.cols()) = G;
          if (blo != alo) K.theta.block(blo * c, alo * c, G.cols(), G.rows()) = G.transpose();
        } else {
          for (Index i = 0; i < ahi - alo; ++i)
            for (Index j = 0; j < bhi - blo; ++j) {
              S acc = S(0);
              for (Index k = 0; k < c; ++k) acc += G(i * c + k, j * c + k);
              K.theta(alo + i, blo + j) = acc;
              if (blo != alo || i != j) K.theta(blo + j, alo + i) = acc;
            }
        }
      }
    }
  } else {
    // Large p: never materialise the Jacobian; one vjp per (probe, output)
    // gives a tangent whose jvp over the whole probe batch fills a column.
    const Trace<S> batch_trace = forward_trace(g, params, probe);
    for (Index j = 0; j < m; ++j) {
      const Tensor<S> xj = detail::probe_example(g, probe, j);
      const Trace<S> tj = forward_trace(g, params, xj);
      Tensor<S> e = Tensor<S>::zeros(tj.output().shape);
      for (Index l = 0; l < c; ++l) {
        e.data.setZero();
        e.data[l] = S(1);
        const ParamVector<S> gjl = vjp(g, params, tj, e);
        const Tensor<S> D = jvp(g, params, batch_trace, gjl);  // (m, c)
        auto Dm = D.as_matrix(m, c);
        if (mode == KernelMode::block) {
          for (Index i = 0; i < m; ++i)
            for (Index k = 0; k < c; ++k) K.theta(i * c + k, j * c + l) = Dm(i, k);
        } else {
          K.theta.col(j) += Dm.col(l);
        }
      }
    }
  }
  return K;
}

struct DriftRecord {
  double rel_frobenius = 0.0;  // ||a - b||_F / ||a||_F
  double alignment = 1.0;      // <a,b>_F / (||a||_F ||b||_F)
};

template <class S>
DriftRecord kernel_drift(const KernelMatrix<S>& a, const KernelMatrix<S>& b) {
  if (a.mode != b.mode) throw std::invalid_argument("kernel_drift: mode mismatch");
  if (a.probe_id != b.probe_id) throw std::invalid_argument("kernel_drift: kernels use different probe sets");
  if (a.theta.rows() != b.theta.rows())
    throw std::invalid_argument("kernel_drift: dimension mismatch");
  const double na = static_cast<double>(a.theta.norm());
  const double nb = static_cast<double>(b.theta.norm());
  DriftRecord r;
  r.rel_frobenius = static_cast<double>((a.theta - b.theta).norm()) / (na > 0 ? na : 1.0);
  const double denom = na * nb;
  const double dot = static_cast<double>((a.theta.array() * b.theta.array()).sum());
  r.alignment = denom > 0 ? std::clamp(dot / denom, -1.0, 1.0) : 1.0;
  return r;
}

struct KernelDiagnostics {
  double symmetry_rel = 0.0;  // max|K - K^T| / max|K|
  double min_eigenvalue = 0.0;
  double trace = 0.0;
};

template <class S>
KernelDiagnostics kernel_diagnostics(const KernelMatrix<S>& k) {
  KernelDiagnostics d;
  const double scale = static_cast<double>(k.theta.cwiseAbs().maxCoeff());
  d.symmetry_rel =
      scale > 0 ? static_cast<double>((k.theta - k.theta.transpose()).cwiseAbs().maxCoeff()) / scale : 0.0;
  const MatX<S> sym = ((k.theta + k.theta.transpose()) / S(2));
  Eigen::SelfAdjointEigenSolver<MatX<S>> es(sym, Eigen::EigenvaluesOnly);
  d.min_eigenvalue = static_cast<double>(es.eigenvalues().minCoeff());
  d.trace = static_cast<double>(k.theta.trace());
  return d;
}

// Scalar-mode kernel as the trace over c x c output blocks of a block kernel.
template <class S>
KernelMatrix<S> scalar_from_block(const KernelMatrix<S>& block) {
  if (block.mode != KernelMode::block) throw std::invalid_argument("scalar_from_block: not a block kernel");
  KernelMatrix<S> out;
  out.mode = KernelMode::scalar;
  out.m = block.m;
  out.c = block.c;
  out.probe_id = block.probe_id;
  out.step = block.step;
  out.anchor_id = block.anchor_id;
  out.theta = MatX<S>::Zero(block.m, block.m);
  for (Index i = 0; i < block.m; ++i)
    for (Index j = 0; j < block.m; ++j) {
      S acc = S(0);
      for (Index k = 0; k < block.c; ++k) acc += block.theta(i * block.c + k, j * block.c + k);
      out.theta(i, j) = acc;
    }
  return out;
}

// Fully-linearised MSE dynamics in closed form: r_{t+1} = (I - eta K) r_t.
// Returns the sequence r_0 .. r_steps.
template <class S>
std::vector<VecX<S>> residual_dynamics_oracle(const KernelMatrix<S>& kernel, const VecX<S>& r0, double eta,
                                              int steps) {
  if (kernel.mode == KernelMode::scalar && kernel.c != 1)
    throw std::invalid_argument("residual_dynamics_oracle: scalar-mode kernel needs c=1 outputs");
  if (kernel.theta.rows() != r0.size())
    throw std::invalid_argument("residual_dynamics_oracle: kernel is " + std::to_string(kernel.theta.rows()) +
                                "-dimensional, residual has " + std::to_string(r0.size()) + " entries");
  std::vector<VecX<S>> seq;
  seq.reserve(static_cast<std::size_t>(steps) + 1);
  seq.push_back(r0);
  VecX<S> r = r0;
  for (int t = 0; t < steps; ++t) {
    r = r - static_cast<S>(eta) * (kernel.theta * r);
    seq.push_back(r);
  }
  return seq;
}

struct FirstOrderReport {
  double discrepancy_eta = 0.0;       // ||df + eta K r|| after one GD step of size eta
  double discrepancy_half_eta = 0.0;  // same with eta/2
  double ratio = 0.0;                 // expected ~4 (O(eta^2) discretisation error)
};

// One true gradient-descent step under MSE compared against the kernel
// gradient-flow prediction, at step sizes eta and eta/2.
template <class S>
FirstOrderReport first_order_check(const DiffGraph& g, const ParamVector<S>& params, const Tensor<S>& X,
                                   const Tensor<S>& Y, double eta, const KernelOptions& opts = {}) {
  const Index m = detail::resolve_batch(g, X.shape);
  if (m > 16) throw std::invalid_argument("first_order_check: probe larger than 16 examples");
  const Trace<S> trace = forward_trace(g, params, X);
  const Tensor<S>& f0 = trace.output();
  if (f0.data.size() != Y.data.size())
    throw std::invalid_argument("first_order_check: label shape mismatch");
  Tensor<S> r;
  r.shape = f0.shape;
  r.data = f0.data - Y.data;

  const KernelMatrix<S> K = empirical_ntk(g, params, X, KernelMode::block, opts);
  const ParamVector<S> grad = vjp(g, params, trace, r);
  const VecX<S> kr = K.theta * r.data;

  FirstOrderReport rep;
  for (int half = 0; half < 2; ++half) {
    const double step = half ? eta / 2 : eta;
    ParamVector<S> moved = params;
    moved.data -= static_cast<S>(step) * grad.data;
    const Tensor<S> f1 = forward(g, moved, X);
    const double disc = static_cast<double>((f1.data - f0.data + static_cast<S>(step) * kr).norm());
    (half ? rep.discrepancy_half_eta : rep.discrepancy_eta) = disc;
  }
  rep.ratio = rep.discrepancy_half_eta > 0 ? rep.discrepancy_eta / rep.discrepancy_half_eta : 0.0;
  return rep;
}

}  // namespace itlin
