// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invdet/tensor.hpp"

namespace invdet::img {

/// Interleaved 8-bit image, row-major, c in {1,2,3,4}.
struct ImageU8 {
    int w = 0, h = 0, c = 0;
    std::vector<uint8_t> pixels;

    uint8_t at(int y, int x, int ch) const {
        return pixels[(static_cast<size_t>(y) * w + x) * c + ch];
    }
};

/// Reads PNG or JPEG (sniffed from the leading bytes).
ImageU8 load_image(const std::string& path);

/// Lossless RGB PNG with pinned encoder settings so output bytes are stable.
void save_png(const ImageU8& image, const std::string& path);

std::vector<uint8_t> encode_jpeg(const ImageU8& image, int quality);
ImageU8 decode_jpeg(const uint8_t* data, size_t size);

/// CHW float in [-1,1]; grayscale replicates to 3 channels, alpha is dropped.
Tensor to_tensor(const ImageU8& image);

/// Clamps to [-1,1] and quantizes to interleaved RGB bytes.
ImageU8 to_image_u8(const Tensor& x);

}  // namespace invdet::img
