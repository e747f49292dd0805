#include "doctest.h"

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>

#include "itlin/data.hpp"
#include "itlin/digits.hpp"
#include "itlin/model.hpp"
#include "itlin/train.hpp"

using namespace itlin;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("itlin_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void truncate_file(const fs::path& p, std::uintmax_t keep) { fs::resize_file(p, keep); }

}  // namespace

TEST_CASE("idx fixture of three known images parses to bytes/255") {
  TempDir dir("idx3");
  std::vector<std::uint8_t> pixels(3 * 28 * 28);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<std::uint8_t>(i % 251);
  idx::write_u8(dir.path / "imgs", {3, 28, 28}, pixels.data());
  const std::vector<std::uint8_t> labels{7, 0, 9};
  idx::write_u8(dir.path / "labs", {3}, labels.data());

  const Dataset<double> ds = mnist_split<double>(dir.path / "imgs", dir.path / "labs", "train");
  CHECK(ds.n() == 3);
  CHECK(ds.labels == std::vector<int>{7, 0, 9});
  bool all_match = true;
  for (Index i = 0; i < ds.inputs.size(); ++i)
    all_match = all_match && ds.inputs.data[i] == static_cast<double>(pixels[static_cast<std::size_t>(i)]) / 255.0;
  CHECK(all_match);
  CHECK(ds.targets.shape == Shape{3, 10});
  CHECK(ds.targets.data[7] == 1.0);  // one-hot of label 7
}

TEST_CASE("idx errors: bad magic, truncation with byte offsets, count mismatch") {
  TempDir dir("idxerr");
  std::vector<std::uint8_t> pixels(2 * 4 * 4, 1);
  idx::write_u8(dir.path / "imgs", {2, 4, 4}, pixels.data());

  SUBCASE("bad magic") {
    std::ofstream os(dir.path / "bad", std::ios::binary);
    os.put(1);  // first byte must be zero
    os.put(0);
    os.put(8);
    os.put(1);
    os.close();
    CHECK_THROWS_WITH_AS(idx::read(dir.path / "bad"), doctest::Contains("bad magic"),
                         std::runtime_error);
  }
  SUBCASE("unsupported type byte") {
    std::ofstream os(dir.path / "bad", std::ios::binary);
    const char hdr[4] = {0, 0, 0x0B, 1};
    os.write(hdr, 4);
    os.close();
    CHECK_THROWS_WITH_AS(idx::read(dir.path / "bad"), doctest::Contains("unsupported"),
                         std::runtime_error);
  }
  SUBCASE("truncated payload reports byte counts") {
    truncate_file(dir.path / "imgs", 20);  // header 16 + 4 of 32 pixels
    CHECK_THROWS_WITH_AS(idx::read(dir.path / "imgs"), doctest::Contains("truncated at byte 20"),
                         std::runtime_error);
  }
  SUBCASE("image/label count mismatch") {
    const std::vector<std::uint8_t> labels{1, 2, 3};
    idx::write_u8(dir.path / "labs", {3}, labels.data());
    CHECK_THROWS_WITH_AS(
        (mnist_split<double>(dir.path / "imgs", dir.path / "labs", "train")),
        doctest::Contains("2 images but 3 labels"), std::runtime_error);
  }
}

TEST_CASE("cifar fixtures: record parsing and malformed files") {
  TempDir dir("cifar");
  SUBCASE("two records give n=2; label 7 with all-255 pixels maps to 1.0") {
    std::vector<std::uint8_t> labels{7, 3};
    std::vector<std::uint8_t> pixels(2 * 3072, 255);
    for (std::size_t i = 3072; i < 2 * 3072; ++i) pixels[i] = 0;
    idx::write_cifar_batch(dir.path / "batch.bin", labels, pixels);
    const Dataset<double> ds = cifar_from_batches<double>({dir.path / "batch.bin"}, "train");
    CHECK(ds.n() == 2);
    CHECK(ds.labels == std::vector<int>{7, 3});
    CHECK(ds.inputs.shape == Shape{2, 3, 32, 32});
    CHECK(ds.inputs.data.segment(0, 3072).minCoeff() == 1.0);  // pre-normalisation scale
    CHECK(ds.inputs.data.segment(3072, 3072).maxCoeff() == 0.0);
  }
  SUBCASE("size not a multiple of 3073 rejected") {
    std::ofstream os(dir.path / "bad.bin", std::ios::binary);
    std::vector<char> junk(3073 + 10, 0);
    os.write(junk.data(), static_cast<std::streamsize>(junk.size()));
    os.close();
    CHECK_THROWS_WITH_AS(idx::read_cifar_batch(dir.path / "bad.bin"),
                         doctest::Contains("multiple of 3073"), std::runtime_error);
  }
  SUBCASE("label byte above 9 rejected") {
    std::vector<std::uint8_t> labels{12};
    std::vector<std::uint8_t> pixels(3072, 0);
    idx::write_cifar_batch(dir.path / "bad.bin", labels, pixels);
    CHECK_THROWS_WITH_AS(idx::read_cifar_batch(dir.path / "bad.bin"),
                         doctest::Contains("label byte 12 > 9"), std::runtime_error);
  }
}

TEST_CASE("synthetic datasets are deterministic in the seed") {
  for (SyntheticKind kind :
       {SyntheticKind::two_gaussians, SyntheticKind::linear_teacher, SyntheticKind::random_labels}) {
    const Dataset<double> a = synthetic<double>(kind, 32, 5, 99);
    const Dataset<double> b = synthetic<double>(kind, 32, 5, 99);
    CHECK(a.inputs.data == b.inputs.data);
    CHECK(a.targets.data == b.targets.data);
    CHECK(a.labels == b.labels);
  }
  CHECK_THROWS_AS(parse_synthetic_kind("moons"), std::invalid_argument);
}

TEST_CASE("linear teacher is recovered by a trained parameter-linear model") {
  const Index dim = 2;
  const Dataset<double> ds = synthetic<double>(SyntheticKind::linear_teacher, 4, dim, 5);
  const DiffGraph g = make_graph({dim}, {Dense{1, false}});

  // least-squares oracle w* = (X^T X)^{-1} X^T y
  CMapRowMat<double> X(ds.inputs.data.data(), 4, dim);
  const VecX<double> wls = (X.transpose() * X).ldlt().solve(X.transpose() * ds.targets.data);
  const VecX<double> teacher = linear_teacher_weights(dim, 5);
  CHECK((wls - teacher).norm() < 1e-10);  // targets are exactly linear

  ParamVector<double> p0;
  p0.layout = g.layout;
  p0.data = VecX<double>::Zero(dim);
  TrainConfig cfg;
  Eigen::SelfAdjointEigenSolver<MatX<double>> es(MatX<double>(X * X.transpose()));
  cfg.eta = 1.0 / es.eigenvalues().maxCoeff();
  cfg.steps = 4000;
  const TrainResult<double> res = train(g, p0, ds, nullptr, cfg);
  CHECK((res.params.data - wls).norm() < 1e-6);
}

TEST_CASE("well-separated gaussians are learned to 100% train accuracy") {
  SyntheticOptions opts;
  opts.separation = 10.0;
  const Dataset<double> ds = synthetic<double>(SyntheticKind::two_gaussians, 64, 4, 6, opts);
  const DiffGraph g = build_mlp(4, {8}, 2, ActKind::tanh);
  const ParamVector<double> p0 = init_params(g, 7);
  TrainConfig cfg;
  cfg.eta = 0.003;
  cfg.steps = 300;
  cfg.loss = LossKind::softmax_ce;
  cfg.period = RefreshPeriod::finite(1);
  const TrainResult<double> res = train(g, p0, ds, nullptr, cfg);
  REQUIRE(res.status == RunStatus::budget_exhausted);
  REQUIRE(res.history.back().train_acc.has_value());
  CHECK(*res.history.back().train_acc == 1.0);
}

TEST_CASE("stratified subsets are deterministic and class-balanced") {
  const Dataset<double> ds = synthetic<double>(SyntheticKind::random_labels, 1000, 3, 8,
                                               SyntheticOptions{.classes = 10});
  const Dataset<double> a = stratified_subset(ds, 200, 11);
  const Dataset<double> b = stratified_subset(ds, 200, 11);
  CHECK(a.inputs.data == b.inputs.data);
  CHECK(a.labels == b.labels);

  std::vector<int> base(10, 0), counts(10, 0);
  for (int l : ds.labels) base[static_cast<std::size_t>(l)]++;
  for (int l : a.labels) counts[static_cast<std::size_t>(l)]++;
  // largest-remainder allocation stays within 1 of exact proportionality
  for (int k = 0; k < 10; ++k) {
    const double exact = 200.0 * base[static_cast<std::size_t>(k)] / 1000.0;
    CHECK(std::abs(counts[static_cast<std::size_t>(k)] - exact) < 1.0);
  }

  const Dataset<double> c = stratified_subset(ds, 200, 12);
  CHECK(c.inputs.data != a.inputs.data);
  CHECK_THROWS_AS(stratified_subset(ds, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(stratified_subset(ds, 1001, 1), std::invalid_argument);
}

TEST_CASE("dataset fixture round-trips bit-exactly") {
  TempDir dir("fixture");
  Dataset<double> ds = synthetic<double>(SyntheticKind::two_gaussians, 17, 6, 13);
  ds.norm.mean = VecX<double>::Zero(1);
  ds.norm.stdev = VecX<double>::Ones(1);
  write_dataset_fixture(ds, dir.path);
  const Dataset<double> back = read_dataset_fixture<double>(dir.path);
  CHECK(back.inputs.shape == ds.inputs.shape);
  CHECK(back.inputs.data == ds.inputs.data);   // f64 payload: bit-exact
  CHECK(back.targets.data == ds.targets.data);
  CHECK(back.labels == ds.labels);
  CHECK(back.classes == ds.classes);
}

TEST_CASE("normalisation is invertible through the stored record") {
  TempDir dir("norm");
  std::vector<std::uint8_t> pixels(5 * 28 * 28);
  Rng rng(3);
  for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.below(256));
  idx::write_u8(dir.path / "train-images-idx3-ubyte", {5, 28, 28}, pixels.data());
  const std::vector<std::uint8_t> labels{0, 1, 2, 3, 4};
  idx::write_u8(dir.path / "train-labels-idx1-ubyte", {5}, labels.data());
  idx::write_u8(dir.path / "t10k-images-idx3-ubyte", {5, 28, 28}, pixels.data());
  idx::write_u8(dir.path / "t10k-labels-idx1-ubyte", {5}, labels.data());

  auto [train_ds, test_ds] = load_mnist<double>(dir.path);
  CHECK(train_ds.norm.applied);
  CHECK(test_ds.norm.applied);
  CHECK(train_ds.norm.mean == test_ds.norm.mean);  // test reuses train statistics

  Dataset<double> inverted = train_ds;
  invert_norm(inverted);
  bool close = true;
  for (Index i = 0; i < inverted.inputs.size(); ++i)
    close = close && std::abs(inverted.inputs.data[i] -
                              static_cast<double>(pixels[static_cast<std::size_t>(i)]) / 255.0) < 1e-12;
  CHECK(close);
  CHECK_THROWS_AS(invert_norm(inverted), std::logic_error);
}

TEST_CASE("generated digit corpus is deterministic and loads as mnist") {
  const fs::path fixtures = fs::path(ITLIN_SOURCE_DIR) / "data" / "fixtures";
  TempDir out1("digits_a");
  TempDir out2("digits_b");
  DigitsCorpusOptions opts;
  opts.train_n = 100;
  opts.test_n = 40;
  opts.seed = 5;
  generate_digits_corpus(fixtures, out1.path, opts);
  generate_digits_corpus(fixtures, out2.path, opts);

  // byte-for-byte reproducible
  for (const char* name : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                           "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"}) {
    std::ifstream a(out1.path / name, std::ios::binary), b(out2.path / name, std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
  }

  auto [train_ds, test_ds] = load_mnist<double>(out1.path);
  CHECK(train_ds.n() == 100);
  CHECK(test_ds.n() == 40);
  CHECK(train_ds.inputs.shape == Shape{100, 1, 28, 28});
  std::vector<int> counts(10, 0);
  for (int l : train_ds.labels) counts[static_cast<std::size_t>(l)]++;
  for (int c : counts) CHECK(c == 10);  // exactly balanced by construction
}
