#include "itlin/digits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "itlin/idx.hpp"
#include "itlin/rng.hpp"

namespace itlin {

namespace {

struct Glyph {
  const std::uint8_t* pixels;  // 8x8, values 0..16
};

double sample_bilinear(const Glyph& g, double sy, double sx) {
  if (sy < -1 || sy > 8 || sx < -1 || sx > 8) return 0.0;
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const double fy = sy - y0;
  const double fx = sx - x0;
  auto at = [&](int y, int x) -> double {
    if (y < 0 || y > 7 || x < 0 || x > 7) return 0.0;
    return static_cast<double>(g.pixels[y * 8 + x]) / 16.0;
  };
  return at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x0 + 1) * (1 - fy) * fx +
         at(y0 + 1, x0) * fy * (1 - fx) + at(y0 + 1, x0 + 1) * fy * fx;
}

void render(const Glyph& g, Rng& rng, std::uint8_t* out28) {
  const double rot = rng.uniform(-0.22, 0.22);
  const double sx = 2.5 * std::exp(rng.uniform(-0.15, 0.15));
  const double sy = 2.5 * std::exp(rng.uniform(-0.15, 0.15));
  const double shear = rng.uniform(-0.18, 0.18);
  const double tx = rng.uniform(-2.5, 2.5);
  const double ty = rng.uniform(-2.5, 2.5);
  const double gamma = rng.uniform(0.7, 1.4);
  const double noise_sigma = 0.025;

  // Forward map: target = R * Shear * diag(sx, sy) * source + center + t.
  const double cr = std::cos(rot), sr = std::sin(rot);
  const double a00 = cr * sx;
  const double a01 = cr * shear * sy - sr * sy;
  const double a10 = sr * sx;
  const double a11 = sr * shear * sy + cr * sy;
  const double det = a00 * a11 - a01 * a10;
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;

  for (int py = 0; py < 28; ++py) {
    for (int px = 0; px < 28; ++px) {
      const double dx = px - 13.5 - tx;
      const double dy = py - 13.5 - ty;
      const double ux = i00 * dx + i01 * dy;
      const double uy = i10 * dx + i11 * dy;
      double v = sample_bilinear(g, uy + 3.5, ux + 3.5);
      if (v > 0) v = std::pow(v, gamma);
      v += noise_sigma * rng.normal();
      v = std::clamp(v, 0.0, 1.0);
      out28[py * 28 + px] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
}

void write_split(const std::filesystem::path& out_dir, const std::string& prefix, Index n,
                 const std::vector<std::vector<const std::uint8_t*>>& pools, Rng& rng) {
  std::vector<int> classes(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) classes[static_cast<std::size_t>(i)] = static_cast<int>(i % 10);
  rng.shuffle(classes.begin(), classes.end());

  std::vector<std::uint8_t> images(static_cast<std::size_t>(n) * 28 * 28);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int c = classes[static_cast<std::size_t>(i)];
    const auto& pool = pools[static_cast<std::size_t>(c)];
    Glyph g{pool[rng.below(pool.size())]};
    render(g, rng, images.data() + static_cast<std::size_t>(i) * 784);
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(c);
  }
  idx::write_u8(out_dir / (prefix + "-images-idx3-ubyte"), {n, 28, 28}, images.data());
  idx::write_u8(out_dir / (prefix + "-labels-idx1-ubyte"), {n}, labels.data());
}

}  // namespace

void generate_digits_corpus(const std::filesystem::path& fixture_dir,
                            const std::filesystem::path& out_dir, const DigitsCorpusOptions& opts) {
  const idx::Array images = idx::read(fixture_dir / "digits8x8-images-idx3-ubyte");
  const idx::Array labels = idx::read(fixture_dir / "digits8x8-labels-idx1-ubyte");
  if (images.dims.size() != 3 || images.dims[1] != 8 || images.dims[2] != 8)
    throw std::runtime_error("digits corpus: fixture images are not 8x8");
  if (labels.dims.size() != 1 || labels.dims[0] != images.dims[0])
    throw std::runtime_error("digits corpus: fixture image/label counts differ");

  Rng rng(opts.seed);
  // Disjoint glyph pools: ~80% of each class feeds the train renderer, the
  // rest feeds test, so test digits come from unseen source glyphs.
  std::vector<std::vector<const std::uint8_t*>> train_pools(10), test_pools(10);
  std::vector<std::vector<Index>> by_class(10);
  for (Index i = 0; i < images.dims[0]; ++i) {
    const int c = labels.u8[static_cast<std::size_t>(i)];
    if (c > 9) throw std::runtime_error("digits corpus: fixture label > 9");
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  for (auto& pool : by_class) {
    rng.shuffle(pool.begin(), pool.end());
    const std::size_t cut = pool.size() - pool.size() / 5;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const std::uint8_t* px = images.u8.data() + static_cast<std::size_t>(pool[i]) * 64;
      (i < cut ? train_pools : test_pools)[static_cast<std::size_t>(labels.u8[static_cast<std::size_t>(pool[i])])]
          .push_back(px);
    }
  }

  std::filesystem::create_directories(out_dir);
  write_split(out_dir, "train", opts.train_n, train_pools, rng);
  write_split(out_dir, "t10k", opts.test_n, test_pools, rng);
}

}  // namespace itlin
