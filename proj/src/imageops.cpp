// SPDX-License-Identifier: Apache-2.0
#include "invdet/imageops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace invdet::imageops {

namespace {

constexpr float kPi = 3.14159265358979323846f;

float sample_clamped(const Tensor& x, int c, int y, int xx) {
    y = std::min(x.height() - 1, std::max(0, y));
    xx = std::min(x.width() - 1, std::max(0, xx));
    return x.at(c, y, xx);
}

float bilinear(const Tensor& x, int c, float fy, float fx) {
    const int y0 = static_cast<int>(std::floor(fy));
    const int x0 = static_cast<int>(std::floor(fx));
    const float wy = fy - y0;
    const float wx = fx - x0;
    const float v00 = sample_clamped(x, c, y0, x0);
    const float v01 = sample_clamped(x, c, y0, x0 + 1);
    const float v10 = sample_clamped(x, c, y0 + 1, x0);
    const float v11 = sample_clamped(x, c, y0 + 1, x0 + 1);
    return v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx + v10 * wy * (1 - wx) + v11 * wy * wx;
}

Tensor crop_region(const Tensor& x, int y0, int x0, int h, int w) {
    Tensor out(x.channels(), h, w);
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at(c, y, xx) = x.at(c, y0 + y, x0 + xx);
    return out;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
    if (out_h == x.height() && out_w == x.width()) return x;
    Tensor out(x.channels(), out_h, out_w);
    const float sy = static_cast<float>(x.height()) / out_h;
    const float sx = static_cast<float>(x.width()) / out_w;
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < out_h; ++y)
            for (int xx = 0; xx < out_w; ++xx)
                out.at(c, y, xx) = bilinear(x, c, (y + 0.5f) * sy - 0.5f, (xx + 0.5f) * sx - 0.5f);
    return out;
}

Tensor gaussian_blur(const Tensor& x, float sigma) {
    if (sigma <= 0.f) return x;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.f * sigma)));
    std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
    float norm = 0.f;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5f * i * i / (sigma * sigma));
        norm += kernel[static_cast<size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= norm;

    Tensor tmp(x.shape());
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < x.height(); ++y)
            for (int xx = 0; xx < x.width(); ++xx) {
                float acc = 0.f;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<size_t>(i + radius)] * sample_clamped(x, c, y, xx + i);
                tmp.at(c, y, xx) = acc;
            }
    Tensor out(x.shape());
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < x.height(); ++y)
            for (int xx = 0; xx < x.width(); ++xx) {
                float acc = 0.f;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<size_t>(i + radius)] * sample_clamped(tmp, c, y + i, xx);
                out.at(c, y, xx) = acc;
            }
    return out;
}

Tensor rotate_bilinear(const Tensor& x, float degrees) {
    const float rad = degrees * kPi / 180.f;
    const float cs = std::cos(rad), sn = std::sin(rad);
    const float cy = (x.height() - 1) / 2.f;
    const float cx = (x.width() - 1) / 2.f;
    Tensor out(x.shape());
    for (int c = 0; c < x.channels(); ++c)
        for (int y = 0; y < x.height(); ++y)
            for (int xx = 0; xx < x.width(); ++xx) {
                const float dy = y - cy, dx = xx - cx;
                const float sy = cs * dy - sn * dx + cy;
                const float sx = sn * dy + cs * dx + cx;
                out.at(c, y, xx) = bilinear(x, c, sy, sx);
            }
    return out;
}

Tensor jpeg_roundtrip(const Tensor& x, int quality) {
    const img::ImageU8 u8 = img::to_image_u8(x);
    const auto bytes = img::encode_jpeg(u8, quality);
    return img::to_tensor(img::decode_jpeg(bytes.data(), bytes.size()));
}

float psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        mse += d * d;
    }
    mse /= a.size();
    if (mse <= 0.0) return std::numeric_limits<float>::infinity();
    const double peak = 2.0;  // dynamic range of [-1,1]
    return static_cast<float>(10.0 * std::log10(peak * peak / mse));
}

Tensor preprocess(const img::ImageU8& raw, int target) {
    if (raw.w < 1 || raw.h < 1) throw std::invalid_argument("preprocess: empty input");
    if (raw.c < 1 || raw.c > 4) throw std::invalid_argument("preprocess: unsupported channels");
    if (target < 1) throw std::invalid_argument("preprocess: bad target");
    Tensor x = img::to_tensor(raw);
    if (x.height() == target && x.width() == target) return x;  // values already rescaled
    int nh, nw;
    if (x.height() <= x.width()) {
        nh = target;
        nw = std::max(target, static_cast<int>(std::lround(
                                  static_cast<double>(x.width()) * target / x.height())));
    } else {
        nw = target;
        nh = std::max(target, static_cast<int>(std::lround(
                                  static_cast<double>(x.height()) * target / x.width())));
    }
    Tensor resized = resize_bilinear(x, nh, nw);
    const int y0 = (nh - target) / 2;
    const int x0 = (nw - target) / 2;
    return crop_region(resized, y0, x0, target, target);
}

void AugmentConfig::validate() const {
    const float probs[] = {p_flip, p_crop, p_jitter, p_grayscale, p_cutout,
                           p_noise, p_blur, p_jpeg, p_rotate};
    for (float p : probs)
        if (p < 0.f || p > 1.f) throw std::invalid_argument("AugmentConfig: probability out of [0,1]");
    if (crop_min_area < 0.5f || crop_min_area > 1.f)
        throw std::invalid_argument("AugmentConfig: crops must retain at least 50% area");
    if (jpeg_quality_min < 1 || jpeg_quality_max > 100 || jpeg_quality_min > jpeg_quality_max)
        throw std::invalid_argument("AugmentConfig: bad jpeg quality range");
    if (noise_sigma_max < 0.f || blur_sigma_max < 0.f || rotate_max_deg < 0.f ||
        cutout_max_side < 0.f || cutout_max_side > 1.f || jitter_strength < 0.f)
        throw std::invalid_argument("AugmentConfig: negative severity");
}

Tensor augment(const Tensor& x, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    Tensor out = x;
    const int h = x.height(), w = x.width();

    if (rng.bernoulli(cfg.p_flip)) {
        Tensor flipped(out.shape());
        for (int c = 0; c < out.channels(); ++c)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) flipped.at(c, y, xx) = out.at(c, y, w - 1 - xx);
        out = flipped;
    }

    if (rng.bernoulli(cfg.p_crop)) {
        const float area = rng.uniform_range(cfg.crop_min_area, 1.f);
        const float side = std::sqrt(area);
        const int ch = std::max(1, static_cast<int>(std::lround(side * h)));
        const int cw = std::max(1, static_cast<int>(std::lround(side * w)));
        const int y0 = rng.uniform_int(0, h - ch);
        const int x0 = rng.uniform_int(0, w - cw);
        out = resize_bilinear(crop_region(out, y0, x0, ch, cw), h, w);
    }

    if (rng.bernoulli(cfg.p_jitter)) {
        const float s = cfg.jitter_strength;
        const float brightness = rng.uniform_range(-s, s);
        const float contrast = 1.f + rng.uniform_range(-s, s);
        const float saturation = 1.f + rng.uniform_range(-s, s);
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const float r = out.at(0, y, xx), g = out.at(1, y, xx), b = out.at(2, y, xx);
                const float luma = 0.299f * r + 0.587f * g + 0.114f * b;
                float ch3[3] = {r, g, b};
                for (int c = 0; c < 3; ++c) {
                    float v = luma + (ch3[c] - luma) * saturation;  // saturation about luma
                    v = v * contrast + brightness;
                    out.at(c, y, xx) = v;
                }
            }
    }

    if (rng.bernoulli(cfg.p_grayscale)) {
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const float luma = 0.299f * out.at(0, y, xx) + 0.587f * out.at(1, y, xx) +
                                   0.114f * out.at(2, y, xx);
                for (int c = 0; c < 3; ++c) out.at(c, y, xx) = luma;
            }
    }

    if (rng.bernoulli(cfg.p_cutout)) {
        const int side_h = std::max(1, static_cast<int>(std::lround(
                                           rng.uniform_range(0.1f, cfg.cutout_max_side) * h)));
        const int side_w = std::max(1, static_cast<int>(std::lround(
                                           rng.uniform_range(0.1f, cfg.cutout_max_side) * w)));
        const int y0 = rng.uniform_int(0, h - side_h);
        const int x0 = rng.uniform_int(0, w - side_w);
        for (int c = 0; c < out.channels(); ++c)
            for (int y = y0; y < y0 + side_h; ++y)
                for (int xx = x0; xx < x0 + side_w; ++xx) out.at(c, y, xx) = 0.f;
    }

    if (rng.bernoulli(cfg.p_noise)) {
        const float sigma = rng.uniform_range(0.f, cfg.noise_sigma_max);
        for (int i = 0; i < out.size(); ++i) out[i] += sigma * rng.normalf();
    }

    if (rng.bernoulli(cfg.p_blur)) {
        const float sigma = rng.uniform_range(0.3f, std::max(0.3f, cfg.blur_sigma_max));
        out = gaussian_blur(out, sigma);
    }

    if (rng.bernoulli(cfg.p_jpeg)) {
        const int quality = rng.uniform_int(cfg.jpeg_quality_min, cfg.jpeg_quality_max);
        out.clamp(-1.f, 1.f);
        out = jpeg_roundtrip(out, quality);
    }

    if (rng.bernoulli(cfg.p_rotate)) {
        const float deg = rng.uniform_range(-cfg.rotate_max_deg, cfg.rotate_max_deg);
        out = rotate_bilinear(out, deg);
    }

    out.clamp(-1.f, 1.f);
    return out;
}

void CorruptionSpec::validate() const {
    switch (kind) {
        case CorruptionKind::Noise:
            if (severity < 0.f || severity > 0.5f)
                throw std::invalid_argument("corruption noise: sigma outside [0,0.5]");
            break;
        case CorruptionKind::Blur:
            if (severity < 0.f || severity > 5.f)
                throw std::invalid_argument("corruption blur: sigma outside [0,5]");
            break;
        case CorruptionKind::Jpeg:
            if (severity < 1.f || severity > 100.f)
                throw std::invalid_argument("corruption jpeg: quality outside [1,100]");
            break;
        case CorruptionKind::Crop:
            if (severity <= 0.f || severity > 1.f)
                throw std::invalid_argument("corruption crop: retained fraction outside (0,1]");
            break;
    }
}

std::string CorruptionSpec::str() const {
    const char* names[] = {"noise", "blur", "jpeg", "crop"};
    return std::string(names[static_cast<int>(kind)]) + "-" + std::to_string(severity);
}

CorruptionSpec parse_corruption(const std::string& kind, float severity) {
    CorruptionSpec spec;
    if (kind == "noise")
        spec.kind = CorruptionKind::Noise;
    else if (kind == "blur")
        spec.kind = CorruptionKind::Blur;
    else if (kind == "jpeg")
        spec.kind = CorruptionKind::Jpeg;
    else if (kind == "crop")
        spec.kind = CorruptionKind::Crop;
    else
        throw std::invalid_argument("unknown corruption kind: " + kind);
    spec.severity = severity;
    spec.validate();
    return spec;
}

Tensor corrupt(const Tensor& x, const CorruptionSpec& spec, Rng& rng) {
    spec.validate();
    Tensor out = x;
    switch (spec.kind) {
        case CorruptionKind::Noise:
            for (int i = 0; i < out.size(); ++i) out[i] += spec.severity * rng.normalf();
            break;
        case CorruptionKind::Blur:
            out = gaussian_blur(out, spec.severity);
            break;
        case CorruptionKind::Jpeg:
            out.clamp(-1.f, 1.f);
            out = jpeg_roundtrip(out, static_cast<int>(spec.severity));
            break;
        case CorruptionKind::Crop: {
            if (spec.severity >= 1.f) break;  // full retention is the identity
            const float side = std::sqrt(spec.severity);
            const int ch = std::max(1, static_cast<int>(std::lround(side * x.height())));
            const int cw = std::max(1, static_cast<int>(std::lround(side * x.width())));
            const int y0 = rng.uniform_int(0, x.height() - ch);
            const int x0 = rng.uniform_int(0, x.width() - cw);
            out = resize_bilinear(crop_region(out, y0, x0, ch, cw), x.height(), x.width());
            break;
        }
    }
    out.clamp(-1.f, 1.f);
    return out;
}

}  // namespace invdet::imageops
