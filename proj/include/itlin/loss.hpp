#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "itlin/tensor.hpp"

namespace itlin {

// Loss conventions are sum-over-batch so that derivative(predictions) is the
// plain residual / softmax difference with no batch-size factor:
//   mse:        L = 1/2 sum (pred - target)^2,  L' = pred - target
//   softmax_ce: L = sum_i logsumexp(z_i) - z_i[y_i],  L' = softmax(z) - onehot(y)
enum class LossKind { mse, softmax_ce };

inline LossKind parse_loss(const std::string& name) {
  if (name == "mse") return LossKind::mse;
  if (name == "cross_entropy" || name == "softmax_ce" || name == "ce") return LossKind::softmax_ce;
  throw std::invalid_argument("unknown loss '" + name + "' (mse | cross_entropy)");
}

template <class S>
RowMat<S> softmax_rows(const Tensor<S>& logits, Index rows, Index cols) {
  auto Z = logits.as_matrix(rows, cols);
  RowMat<S> P(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const S m = Z.row(i).maxCoeff();
    P.row(i) = (Z.row(i).array() - m).exp();
    P.row(i) /= P.row(i).sum();
  }
  return P;
}

template <class S>
double mse_value(const Tensor<S>& pred, const Tensor<S>& target) {
  if (pred.data.size() != target.data.size())
    throw std::invalid_argument("mse: prediction shape " + shape_str(pred.shape) + " vs target " +
                                shape_str(target.shape));
  return 0.5 * static_cast<double>((pred.data - target.data).squaredNorm());
}

template <class S>
Tensor<S> mse_derivative(const Tensor<S>& pred, const Tensor<S>& target) {
  if (pred.data.size() != target.data.size())
    throw std::invalid_argument("mse: prediction shape " + shape_str(pred.shape) + " vs target " +
                                shape_str(target.shape));
  Tensor<S> d;
  d.shape = pred.shape;
  d.data = pred.data - target.data;
  return d;
}

template <class S>
double softmax_ce_value(const Tensor<S>& logits, const std::vector<int>& labels) {
  const Index n = static_cast<Index>(labels.size());
  const Index c = logits.data.size() / n;
  auto Z = logits.as_matrix(n, c);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c) throw std::invalid_argument("cross_entropy: label out of range");
    const S m = Z.row(i).maxCoeff();
    const S lse = std::log((Z.row(i).array() - m).exp().sum()) + m;
    total += static_cast<double>(lse - Z(i, labels[i]));
  }
  return total;
}

template <class S>
Tensor<S> softmax_ce_derivative(const Tensor<S>& logits, const std::vector<int>& labels) {
  const Index n = static_cast<Index>(labels.size());
  const Index c = logits.data.size() / n;
  RowMat<S> P = softmax_rows(logits, n, c);
  for (Index i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c) throw std::invalid_argument("cross_entropy: label out of range");
    P(i, labels[i]) -= S(1);
  }
  Tensor<S> d;
  d.shape = logits.shape;
  d.data = CMapVec<S>(P.data(), P.size());
  return d;
}

}  // namespace itlin
