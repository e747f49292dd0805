#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "itlin/idx.hpp"
#include "itlin/rng.hpp"
#include "itlin/tensor.hpp"

namespace itlin {

template <class S>
struct NormRecord {
  VecX<S> mean;   // per channel
  VecX<S> stdev;  // per channel, floored away from zero
  bool applied = false;
};

template <class S>
struct Dataset {
  Tensor<S> inputs;          // (n, C, H, W) or (n, d)
  std::vector<int> labels;   // size n; all-zero for regression sets
  Tensor<S> targets;         // (n, c) one-hot, or (n, out) regression targets
  Index classes = 0;         // 0 => regression
  std::string split;
  NormRecord<S> norm;

  Index n() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
  Shape example_shape() const { return Shape(inputs.shape.begin() + 1, inputs.shape.end()); }
  Index example_size() const { return numel(example_shape()); }
};

template <class S>
Tensor<S> one_hot(const std::vector<int>& labels, Index classes) {
  Tensor<S> t = Tensor<S>::zeros({static_cast<Index>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) + " outside [0," +
                                  std::to_string(classes) + ")");
    t.data[static_cast<Index>(i) * classes + labels[i]] = S(1);
  }
  return t;
}

// Per-channel statistics from the training split; the same record is applied
// to test data, never recomputed there.
template <class S>
NormRecord<S> channel_stats(const Dataset<S>& train) {
  const Shape ex = train.example_shape();
  const Index channels = ex.size() == 3 ? ex[0] : Index(1);
  const Index per_channel = train.example_size() / channels;
  NormRecord<S> rec;
  rec.mean = VecX<S>::Zero(channels);
  rec.stdev = VecX<S>::Zero(channels);
  const Index n = train.n();
  for (Index c = 0; c < channels; ++c) {
    double sum = 0, sq = 0;
    for (Index i = 0; i < n; ++i) {
      const S* p = train.inputs.data.data() + (i * channels + c) * per_channel;
      for (Index j = 0; j < per_channel; ++j) {
        sum += static_cast<double>(p[j]);
        sq += static_cast<double>(p[j]) * static_cast<double>(p[j]);
      }
    }
    const double count = static_cast<double>(n * per_channel);
    const double mean = sum / count;
    const double var = std::max(sq / count - mean * mean, 0.0);
    rec.mean[c] = static_cast<S>(mean);
    rec.stdev[c] = static_cast<S>(std::max(std::sqrt(var), 1e-8));
  }
  return rec;
}

template <class S>
void apply_norm(Dataset<S>& ds, const NormRecord<S>& rec) {
  if (ds.norm.applied) throw std::logic_error("apply_norm: dataset already normalised");
  const Shape ex = ds.example_shape();
  const Index channels = ex.size() == 3 ? ex[0] : Index(1);
  const Index per_channel = ds.example_size() / channels;
  for (Index i = 0; i < ds.n(); ++i)
    for (Index c = 0; c < channels; ++c) {
      S* p = ds.inputs.data.data() + (i * channels + c) * per_channel;
      for (Index j = 0; j < per_channel; ++j) p[j] = (p[j] - rec.mean[c]) / rec.stdev[c];
    }
  ds.norm = rec;
  ds.norm.applied = true;
}

template <class S>
void invert_norm(Dataset<S>& ds) {
  if (!ds.norm.applied) throw std::logic_error("invert_norm: dataset is not normalised");
  const Shape ex = ds.example_shape();
  const Index channels = ex.size() == 3 ? ex[0] : Index(1);
  const Index per_channel = ds.example_size() / channels;
  for (Index i = 0; i < ds.n(); ++i)
    for (Index c = 0; c < channels; ++c) {
      S* p = ds.inputs.data.data() + (i * channels + c) * per_channel;
      for (Index j = 0; j < per_channel; ++j) p[j] = p[j] * ds.norm.stdev[c] + ds.norm.mean[c];
    }
  ds.norm.applied = false;
}

// ---------------------------------------------------------------------------
// MNIST (IDX files)

template <class S>
Dataset<S> mnist_split(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       const std::string& split) {
  const idx::Array images = idx::read(images_path);
  const idx::Array labels = idx::read(labels_path);
  if (images.type != 0x08 || images.dims.size() != 3)
    throw std::runtime_error("mnist: " + images_path.string() +
                             " is not an unsigned-byte idx3 image file (magic 0x00000803)");
  if (labels.type != 0x08 || labels.dims.size() != 1)
    throw std::runtime_error("mnist: " + labels_path.string() +
                             " is not an unsigned-byte idx1 label file (magic 0x00000801)");
  if (images.dims[0] != labels.dims[0])
    throw std::runtime_error("mnist: " + std::to_string(images.dims[0]) + " images but " +
                             std::to_string(labels.dims[0]) + " labels");
  const Index n = images.dims[0], h = images.dims[1], w = images.dims[2];
  Dataset<S> ds;
  ds.split = split;
  ds.classes = 10;
  ds.inputs = Tensor<S>::zeros({n, 1, h, w});
  for (Index i = 0; i < n * h * w; ++i) ds.inputs.data[i] = static_cast<S>(images.u8[i]) / S(255);
  ds.labels.assign(labels.u8.begin(), labels.u8.end());
  for (int l : ds.labels)
    if (l > 9) throw std::runtime_error("mnist: label " + std::to_string(l) + " > 9 in " + labels_path.string());
  ds.targets = one_hot<S>(ds.labels, 10);
  return ds;
}

// Pixel values scaled to [0,1], then normalised with train-split statistics.
template <class S>
std::pair<Dataset<S>, Dataset<S>> load_mnist(const std::filesystem::path& dir) {
  auto train = mnist_split<S>(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", "train");
  auto test = mnist_split<S>(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", "test");
  const NormRecord<S> rec = channel_stats(train);
  apply_norm(train, rec);
  apply_norm(test, rec);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// CIFAR-10 (binary batches)

template <class S>
Dataset<S> cifar_from_batches(const std::vector<std::filesystem::path>& files, const std::string& split) {
  Dataset<S> ds;
  ds.split = split;
  ds.classes = 10;
  std::vector<std::uint8_t> labels, pixels;
  for (const auto& f : files) {
    idx::CifarBatch b = idx::read_cifar_batch(f);
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    pixels.insert(pixels.end(), b.pixels.begin(), b.pixels.end());
  }
  const Index n = static_cast<Index>(labels.size());
  ds.inputs = Tensor<S>::zeros({n, 3, 32, 32});
  for (Index i = 0; i < static_cast<Index>(pixels.size()); ++i)
    ds.inputs.data[i] = static_cast<S>(pixels[static_cast<std::size_t>(i)]) / S(255);
  ds.labels.assign(labels.begin(), labels.end());
  ds.targets = one_hot<S>(ds.labels, 10);
  return ds;
}

template <class S>
std::pair<Dataset<S>, Dataset<S>> load_cifar10(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> train_files;
  for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  auto train = cifar_from_batches<S>(train_files, "train");
  auto test = cifar_from_batches<S>({dir / "test_batch.bin"}, "test");
  const NormRecord<S> rec = channel_stats(train);
  apply_norm(train, rec);
  apply_norm(test, rec);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Synthetic problems

enum class SyntheticKind { two_gaussians, linear_teacher, random_labels };

inline SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "two-gaussians") return SyntheticKind::two_gaussians;
  if (name == "linear-teacher") return SyntheticKind::linear_teacher;
  if (name == "random-labels") return SyntheticKind::random_labels;
  throw std::invalid_argument("unknown synthetic kind '" + name +
                              "' (two-gaussians | linear-teacher | random-labels)");
}

struct SyntheticOptions {
  double separation = 6.0;  // two-gaussians: distance between means in sigma units
  double cond = 1.0;        // linear-teacher: condition number of the input spread
  double noise = 0.0;       // linear-teacher: target noise sigma
  Index classes = 2;        // random-labels
};

template <class S>
Dataset<S> synthetic(SyntheticKind kind, Index n, Index dim, std::uint64_t seed,
                     const SyntheticOptions& opts = {}) {
  if (n < 1) throw std::invalid_argument("synthetic: n must be >= 1");
  if (dim < 1) throw std::invalid_argument("synthetic: dim must be >= 1");
  Rng rng(seed);
  Dataset<S> ds;
  ds.split = "train";
  ds.inputs = Tensor<S>::zeros({n, dim});

  if (kind == SyntheticKind::two_gaussians) {
    VecX<double> dir(dim);
    for (Index j = 0; j < dim; ++j) dir[j] = rng.normal();
    dir /= dir.norm();
    ds.classes = 2;
    ds.labels.resize(n);
    for (Index i = 0; i < n; ++i) {
      const int y = static_cast<int>(rng.below(2));
      ds.labels[static_cast<std::size_t>(i)] = y;
      const double sign = y == 0 ? -1.0 : 1.0;
      for (Index j = 0; j < dim; ++j)
        ds.inputs.data[i * dim + j] =
            static_cast<S>(rng.normal() + sign * 0.5 * opts.separation * dir[j]);
    }
    ds.targets = one_hot<S>(ds.labels, 2);
  } else if (kind == SyntheticKind::linear_teacher) {
    // Per-dimension scales spread geometrically so the Gram matrix of the
    // inputs has condition number ~ opts.cond.
    VecX<double> scale(dim);
    for (Index j = 0; j < dim; ++j)
      scale[j] = dim > 1 ? std::pow(opts.cond, -0.5 * static_cast<double>(j) / (dim - 1)) : 1.0;
    VecX<double> teacher(dim);
    for (Index j = 0; j < dim; ++j) teacher[j] = rng.normal();
    ds.classes = 0;
    ds.labels.assign(static_cast<std::size_t>(n), 0);
    ds.targets = Tensor<S>::zeros({n, 1});
    for (Index i = 0; i < n; ++i) {
      double y = 0;
      for (Index j = 0; j < dim; ++j) {
        const double x = rng.normal() * scale[j];
        ds.inputs.data[i * dim + j] = static_cast<S>(x);
        y += teacher[j] * x;
      }
      if (opts.noise > 0) y += opts.noise * rng.normal();
      ds.targets.data[i] = static_cast<S>(y);
    }
  } else {
    if (opts.classes < 2) throw std::invalid_argument("synthetic: random-labels needs >= 2 classes");
    ds.classes = opts.classes;
    ds.labels.resize(n);
    for (Index i = 0; i < n; ++i) {
      ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(opts.classes)));
      for (Index j = 0; j < dim; ++j) ds.inputs.data[i * dim + j] = static_cast<S>(rng.normal());
    }
    ds.targets = one_hot<S>(ds.labels, opts.classes);
  }
  return ds;
}

// Hidden teacher weights for a given linear-teacher seed (for recovery tests).
inline VecX<double> linear_teacher_weights(Index dim, std::uint64_t seed, double cond = 1.0) {
  Rng rng(seed);
  VecX<double> scale(dim);
  for (Index j = 0; j < dim; ++j)
    scale[j] = dim > 1 ? std::pow(cond, -0.5 * static_cast<double>(j) / (dim - 1)) : 1.0;
  VecX<double> teacher(dim);
  for (Index j = 0; j < dim; ++j) teacher[j] = rng.normal();
  return teacher;
}

// ---------------------------------------------------------------------------
// Selection

template <class S>
Dataset<S> take_rows(const Dataset<S>& ds, const std::vector<Index>& rows) {
  Dataset<S> out;
  out.classes = ds.classes;
  out.split = ds.split;
  out.norm = ds.norm;
  const Index per = ds.example_size();
  const Index c = ds.targets.size() > 0 ? ds.targets.shape[1] : 0;
  Shape in_shape = ds.inputs.shape;
  in_shape[0] = static_cast<Index>(rows.size());
  out.inputs = Tensor<S>::zeros(in_shape);
  if (c > 0) out.targets = Tensor<S>::zeros({static_cast<Index>(rows.size()), c});
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    out.inputs.data.segment(static_cast<Index>(i) * per, per) = ds.inputs.data.segment(r * per, per);
    if (c > 0)
      out.targets.data.segment(static_cast<Index>(i) * c, c) = ds.targets.data.segment(r * c, c);
    out.labels[i] = ds.labels[static_cast<std::size_t>(r)];
  }
  return out;
}

// Deterministic class-stratified selection: per-class allocations follow the
// class proportions (largest remainder), order is a seeded shuffle.
template <class S>
std::vector<Index> stratified_indices(const Dataset<S>& ds, Index size, std::uint64_t seed) {
  const Index n = ds.n();
  if (size < 1 || size > n)
    throw std::invalid_argument("subset: size " + std::to_string(size) + " outside [1," + std::to_string(n) + "]");
  Rng rng(seed);
  std::vector<Index> chosen;
  chosen.reserve(static_cast<std::size_t>(size));
  if (ds.classes == 0) {
    std::vector<Index> all(n);
    std::iota(all.begin(), all.end(), Index(0));
    rng.shuffle(all.begin(), all.end());
    chosen.assign(all.begin(), all.begin() + size);
  } else {
    std::vector<std::vector<Index>> pools(static_cast<std::size_t>(ds.classes));
    for (Index i = 0; i < n; ++i) pools[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
    std::vector<Index> want(pools.size(), 0);
    std::vector<double> frac(pools.size(), 0.0);
    Index assigned = 0;
    for (std::size_t c = 0; c < pools.size(); ++c) {
      const double exact = static_cast<double>(size) * pools[c].size() / static_cast<double>(n);
      want[c] = static_cast<Index>(exact);
      frac[c] = exact - static_cast<double>(want[c]);
      assigned += want[c];
    }
    while (assigned < size) {  // largest remainder, ties to lower class id
      std::size_t best = 0;
      for (std::size_t c = 1; c < pools.size(); ++c)
        if (frac[c] > frac[best]) best = c;
      ++want[best];
      frac[best] = -1;
      ++assigned;
    }
    for (std::size_t c = 0; c < pools.size(); ++c) {
      rng.shuffle(pools[c].begin(), pools[c].end());
      if (want[c] > static_cast<Index>(pools[c].size()))
        throw std::invalid_argument("subset: class " + std::to_string(c) + " has only " +
                                    std::to_string(pools[c].size()) + " examples, need " +
                                    std::to_string(want[c]));
      chosen.insert(chosen.end(), pools[c].begin(), pools[c].begin() + want[c]);
    }
    rng.shuffle(chosen.begin(), chosen.end());
  }
  return chosen;
}

template <class S>
Dataset<S> stratified_subset(const Dataset<S>& ds, Index size, std::uint64_t seed) {
  return take_rows(ds, stratified_indices(ds, size, seed));
}

// ---------------------------------------------------------------------------
// Fixture round-trip (a directory of IDX arrays; doubles stay bit-exact)

template <class S>
void write_dataset_fixture(const Dataset<S>& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<double> input_bytes(ds.inputs.data.size());
  for (Index i = 0; i < ds.inputs.data.size(); ++i) input_bytes[static_cast<std::size_t>(i)] = static_cast<double>(ds.inputs.data[i]);
  idx::write_f64(dir / "inputs-idx-f64", ds.inputs.shape, input_bytes.data());
  std::vector<std::uint8_t> lab(ds.labels.size());
  for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = static_cast<std::uint8_t>(ds.labels[i]);
  idx::write_u8(dir / "labels-idx-u8", {static_cast<Index>(lab.size())}, lab.data());
  std::vector<double> target_bytes(ds.targets.data.size());
  for (Index i = 0; i < ds.targets.data.size(); ++i) target_bytes[static_cast<std::size_t>(i)] = static_cast<double>(ds.targets.data[i]);
  idx::write_f64(dir / "targets-idx-f64", ds.targets.shape, target_bytes.data());
  const std::uint8_t meta[2] = {static_cast<std::uint8_t>(ds.classes),
                                static_cast<std::uint8_t>(ds.norm.applied ? 1 : 0)};
  idx::write_u8(dir / "meta-idx-u8", {2}, meta);
  if (ds.norm.mean.size() > 0) {
    std::vector<double> nr(static_cast<std::size_t>(2 * ds.norm.mean.size()));
    for (Index i = 0; i < ds.norm.mean.size(); ++i) {
      nr[static_cast<std::size_t>(i)] = static_cast<double>(ds.norm.mean[i]);
      nr[static_cast<std::size_t>(ds.norm.mean.size() + i)] = static_cast<double>(ds.norm.stdev[i]);
    }
    idx::write_f64(dir / "norm-idx-f64", {2, ds.norm.mean.size()}, nr.data());
  }
}

template <class S>
Dataset<S> read_dataset_fixture(const std::filesystem::path& dir) {
  Dataset<S> ds;
  const idx::Array inputs = idx::read(dir / "inputs-idx-f64");
  ds.inputs.shape.assign(inputs.dims.begin(), inputs.dims.end());
  ds.inputs.data.resize(inputs.count());
  for (Index i = 0; i < ds.inputs.data.size(); ++i) ds.inputs.data[i] = static_cast<S>(inputs.f64[static_cast<std::size_t>(i)]);
  const idx::Array labels = idx::read(dir / "labels-idx-u8");
  ds.labels.assign(labels.u8.begin(), labels.u8.end());
  const idx::Array targets = idx::read(dir / "targets-idx-f64");
  ds.targets.shape.assign(targets.dims.begin(), targets.dims.end());
  ds.targets.data.resize(targets.count());
  for (Index i = 0; i < ds.targets.data.size(); ++i) ds.targets.data[i] = static_cast<S>(targets.f64[static_cast<std::size_t>(i)]);
  const idx::Array meta = idx::read(dir / "meta-idx-u8");
  ds.classes = meta.u8.at(0);
  if (std::filesystem::exists(dir / "norm-idx-f64")) {
    const idx::Array nr = idx::read(dir / "norm-idx-f64");
    const Index c = nr.dims.at(1);
    ds.norm.mean.resize(c);
    ds.norm.stdev.resize(c);
    for (Index i = 0; i < c; ++i) {
      ds.norm.mean[i] = static_cast<S>(nr.f64[static_cast<std::size_t>(i)]);
      ds.norm.stdev[i] = static_cast<S>(nr.f64[static_cast<std::size_t>(c + i)]);
    }
  }
  ds.norm.applied = meta.u8.at(1) != 0;
  return ds;
}

}  // namespace itlin
