// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "invdet/imageio.hpp"
#include "invdet/rng.hpp"
#include "invdet/tensor.hpp"

namespace invdet::imageops {

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor gaussian_blur(const Tensor& x, float sigma);
Tensor rotate_bilinear(const Tensor& x, float degrees);
Tensor jpeg_roundtrip(const Tensor& x, int quality);
float psnr(const Tensor& a, const Tensor& b);

/// Raw decoded pixels -> model input: shortest side resized to `target`,
/// center square crop, values mapped to [-1,1] on 3 channels. Inputs that
/// already match the target square pass through without resampling.
Tensor preprocess(const img::ImageU8& raw, int target);

/// Train-time random transform suite, applied in a fixed order:
/// flip, crop, color jitter, grayscale, cutout, noise, blur, jpeg, rotate.
struct AugmentConfig {
    float p_flip = 0.5f;
    float p_crop = 0.35f;
    float p_jitter = 0.5f;
    float p_grayscale = 0.1f;
    float p_cutout = 0.25f;
    float p_noise = 0.25f;
    float p_blur = 0.25f;
    float p_jpeg = 0.35f;
    float p_rotate = 0.25f;

    float crop_min_area = 0.5f;  // invariant: crops retain at least half the area
    float jitter_strength = 0.2f;
    float cutout_max_side = 0.3f;
    float noise_sigma_max = 0.05f;
    float blur_sigma_max = 1.5f;
    int jpeg_quality_min = 30;
    int jpeg_quality_max = 95;
    float rotate_max_deg = 15.f;

    void validate() const;
};

Tensor augment(const Tensor& x, const AugmentConfig& cfg, Rng& rng);

/// Evaluation-time degradations; exactly one per call.
enum class CorruptionKind { Noise, Blur, Jpeg, Crop };

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::Noise;
    // sigma for noise/blur, quality for jpeg, retained area fraction for crop
    float severity = 0.f;

    void validate() const;
    std::string str() const;
};

CorruptionSpec parse_corruption(const std::string& kind, float severity);

Tensor corrupt(const Tensor& x, const CorruptionSpec& spec, Rng& rng);

}  // namespace invdet::imageops
