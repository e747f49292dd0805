#include "doctest.h"

#include "itlin/rng.hpp"
#include "itlin/tensor.hpp"

using namespace itlin;

TEST_CASE("tensor shape must cover the buffer") {
  CHECK_NOTHROW(Tensor<double>::of({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(Tensor<double>::of({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK(Tensor<double>::zeros({3, 4}).size() == 12);
  CHECK(numel({2, 3, 4}) == 24);
}

TEST_CASE("tensor finiteness and views") {
  Tensor<double> t = Tensor<double>::of({2, 2}, {1, 2, 3, 4});
  CHECK(t.all_finite());
  t.data[2] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
  auto m = t.as_matrix(2, 2);
  CHECK(m(0, 1) == 2.0);
  CHECK_THROWS(t.as_matrix(3, 2));
}

TEST_CASE("param vector flatten/unflatten is the identity") {
  auto layout = std::make_shared<ParamLayout>();
  layout->push_back({0, "weight", {2, 3}, 0, 6});
  layout->push_back({0, "bias", {2}, 6, 2});
  ParamVector<double> p;
  p.layout = layout;
  p.data.resize(8);
  for (Index i = 0; i < 8; ++i) p.data[i] = 0.5 * static_cast<double>(i) - 2.0;

  const auto blocks = p.unflatten();
  REQUIRE(blocks.size() == 2);
  CHECK(blocks[0].shape == Shape{2, 3});
  CHECK(blocks[1].shape == Shape{2});
  const auto back = ParamVector<double>::flatten(blocks, layout);
  CHECK(back.data == p.data);

  // offsets are contiguous and cover [0, p)
  Index expected = 0;
  for (const auto& slot : *layout) {
    CHECK(slot.offset == expected);
    expected += slot.size;
  }
  CHECK(expected == p.size());
}

TEST_CASE("rng streams are deterministic and seed-sensitive") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_equal_cross = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.normal(), y = b.normal(), z = c.normal();
    all_equal = all_equal && (x == y);
    any_equal_cross = any_equal_cross || (x == z);
  }
  CHECK(all_equal);
  CHECK_FALSE(any_equal_cross);
}

TEST_CASE("rng shuffle is a permutation") {
  Rng rng(7);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  rng.shuffle(v.begin(), v.end());
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 10; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
}
