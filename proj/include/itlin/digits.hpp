#pragma once

#include <cstdint>
#include <filesystem>

#include "itlin/tensor.hpp"

namespace itlin {

// Renders an MNIST-geometry corpus (28x28 grayscale, 10 classes, standard IDX
// file names) from the bundled 8x8 handwritten-digit fixture: per-sample
// random affine placement, intensity jitter and pixel noise. Train and test
// images draw from disjoint source glyph pools. Fully deterministic in the
// seed, so generated corpora are reproducible byte for byte.
struct DigitsCorpusOptions {
  Index train_n = 10000;
  Index test_n = 2000;
  std::uint64_t seed = 7;
};

void generate_digits_corpus(const std::filesystem::path& fixture_dir,
                            const std::filesystem::path& out_dir, const DigitsCorpusOptions& opts = {});

}  // namespace itlin
