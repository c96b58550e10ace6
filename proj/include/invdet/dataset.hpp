// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "invdet/rng.hpp"
#include "invdet/tensor.hpp"

namespace invdet::data {

/// Self-contained labeled corpus: procedurally rendered shape/texture
/// classes with per-sample jitter in geometry, palette, sharpness and noise.
struct ToyDatasetConfig {
    int n_classes = 10;
    int train_count = 600;
    int val_count = 200;
    int test_count = 400;
    int image_size = 32;
    uint64_t seed = 1234;
};

/// One rendered sample in [-1,1], 3 x size x size.
Tensor render_toy_sample(int class_id, int image_size, Rng& rng);

/// Writes PNG images plus a JSON-lines manifest (label "real", split per
/// config, class_id set). Returns the manifest path.
std::string generate_toy_dataset(const ToyDatasetConfig& cfg, const std::string& out_dir);

}  // namespace invdet::data
