#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace itlin {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <class S> using VecX = Eigen::Vector<S, Eigen::Dynamic>;
template <class S> using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S> using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S> using MapRowMat = Eigen::Map<RowMat<S>>;
template <class S> using CMapRowMat = Eigen::Map<const RowMat<S>>;
template <class S> using MapVec = Eigen::Map<VecX<S>>;
template <class S> using CMapVec = Eigen::Map<const VecX<S>>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

// Dense value with an explicit shape over a flat row-major buffer.
template <class Scalar>
struct Tensor {
  Shape shape;
  VecX<Scalar> data;

  Tensor() = default;
  Tensor(Shape s, VecX<Scalar> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not cover a buffer of " +
                                  std::to_string(data.size()) + " elements");
  }

  static Tensor zeros(Shape s) {
    Tensor t;
    t.data = VecX<Scalar>::Zero(numel(s));
    t.shape = std::move(s);
    return t;
  }

  static Tensor of(Shape s, std::initializer_list<Scalar> values) {
    Tensor t;
    t.shape = std::move(s);
    t.data.resize(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) t.data[i++] = v;
    if (numel(t.shape) != t.data.size())
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) + " values for shape " +
                                  shape_str(t.shape));
    return t;
  }

  Index size() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index dim(std::size_t i) const { return shape.at(i); }

  bool all_finite() const { return data.allFinite(); }

  // Row-major 2-d view over the flat buffer.
  MapRowMat<Scalar> as_matrix(Index rows, Index cols) {
    if (rows * cols != data.size())
      throw std::invalid_argument("tensor view " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " does not cover " + std::to_string(data.size()) + " elements");
    return MapRowMat<Scalar>(data.data(), rows, cols);
  }
  CMapRowMat<Scalar> as_matrix(Index rows, Index cols) const {
    if (rows * cols != data.size())
      throw std::invalid_argument("tensor view " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " does not cover " + std::to_string(data.size()) + " elements");
    return CMapRowMat<Scalar>(data.data(), rows, cols);
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data = data.template cast<T>();
    return out;
  }
};

template <class S>
bool same_shape(const Tensor<S>& a, const Tensor<S>& b) {
  return a.shape == b.shape;
}

// One named parameter block inside the flat parameter vector.
struct ParamSlot {
  Index layer = 0;
  std::string name;  // "weight" or "bias"
  Shape shape;
  Index offset = 0;
  Index size = 0;
};

using ParamLayout = std::vector<ParamSlot>;

// All model parameters flattened into a single vector, with the layout map
// back to per-layer blocks. Copies share the (immutable) layout.
template <class Scalar>
struct ParamVector {
  VecX<Scalar> data;
  std::shared_ptr<const ParamLayout> layout;

  Index size() const { return data.size(); }
  bool all_finite() const { return data.allFinite(); }

  auto slot(const ParamSlot& s) { return data.segment(s.offset, s.size); }
  auto slot(const ParamSlot& s) const { return data.segment(s.offset, s.size); }

  static ParamVector zeros_like(const ParamVector& other) {
    ParamVector out;
    out.data = VecX<Scalar>::Zero(other.data.size());
    out.layout = other.layout;
    return out;
  }

  std::vector<Tensor<Scalar>> unflatten() const {
    std::vector<Tensor<Scalar>> blocks;
    if (!layout) throw std::logic_error("param vector has no layout");
    blocks.reserve(layout->size());
    for (const ParamSlot& s : *layout) blocks.emplace_back(s.shape, data.segment(s.offset, s.size));
    return blocks;
  }

  static ParamVector flatten(const std::vector<Tensor<Scalar>>& blocks,
                             std::shared_ptr<const ParamLayout> layout) {
    if (!layout || blocks.size() != layout->size())
      throw std::invalid_argument("flatten: block count does not match layout");
    Index total = 0;
    for (const ParamSlot& s : *layout) total += s.size;
    ParamVector out;
    out.data.resize(total);
    out.layout = layout;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const ParamSlot& s = (*layout)[i];
      if (blocks[i].shape != s.shape)
        throw std::invalid_argument("flatten: block " + std::to_string(i) + " has shape " +
                                    shape_str(blocks[i].shape) + ", layout expects " + shape_str(s.shape));
      out.data.segment(s.offset, s.size) = blocks[i].data;
    }
    return out;
  }

  template <class T>
  ParamVector<T> cast() const {
    ParamVector<T> out;
    out.data = data.template cast<T>();
    out.layout = layout;
    return out;
  }
};

}  // namespace itlin
