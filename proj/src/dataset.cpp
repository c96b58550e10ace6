// SPDX-License-Identifier: Apache-2.0
#include "invdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "invdet/imageio.hpp"
#include "invdet/imageops.hpp"
#include "invdet/manifest.hpp"

namespace invdet::data {

namespace fs = std::filesystem;

namespace {

constexpr float kPi = 3.14159265358979323846f;

struct Rgb {
    float r, g, b;
};

Rgb hsv_to_rgb(float h, float s, float v) {
    h = h - std::floor(h);
    const float c = v * s;
    const float hp = h * 6.f;
    const float x = c * (1.f - std::fabs(std::fmod(hp, 2.f) - 1.f));
    float r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    const float m = v - c;
    return {r + m, g + m, b + m};
}

struct ShapeParams {
    int kind = 0;
    float cx = 0, cy = 0;     // center in [-1,1]
    float radius = 0.55f;
    float theta = 0.f;        // orientation
    float aux = 0.f;          // kind-specific (ring width, stripe count, ...)
};

bool point_in_triangle(float px, float py, float ax, float ay, float bx, float by, float cx,
                       float cy) {
    auto cross = [](float ox, float oy, float ux, float uy, float vx, float vy) {
        return (ux - ox) * (vy - oy) - (uy - oy) * (vx - ox);
    };
    const float d1 = cross(ax, ay, bx, by, px, py);
    const float d2 = cross(bx, by, cx, cy, px, py);
    const float d3 = cross(cx, cy, ax, ay, px, py);
    const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
    const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
    return !(has_neg && has_pos);
}

// Membership of a normalized point (u,v) in the class shape.
bool inside_shape(const ShapeParams& p, float u, float v) {
    const float du = u - p.cx, dv = v - p.cy;
    const float cs = std::cos(p.theta), sn = std::sin(p.theta);
    const float ru = cs * du + sn * dv;
    const float rv = -sn * du + cs * dv;
    const float r = std::sqrt(du * du + dv * dv);
    switch (p.kind) {
        case 0:  // disc
            return r <= p.radius;
        case 1:  // ring
            return r <= p.radius && r >= p.radius * (0.45f + 0.25f * p.aux);
        case 2:  // square
            return std::max(std::fabs(ru), std::fabs(rv)) <= p.radius * 0.85f;
        case 3:  // diamond
            return std::fabs(ru) + std::fabs(rv) <= p.radius * 1.1f;
        case 4: {  // triangle
            float vx[3], vy[3];
            for (int i = 0; i < 3; ++i) {
                const float ang = p.theta + kPi / 2.f + 2.f * kPi * i / 3.f;
                vx[i] = p.cx + p.radius * std::cos(ang);
                vy[i] = p.cy + p.radius * std::sin(ang);
            }
            return point_in_triangle(u, v, vx[0], vy[0], vx[1], vy[1], vx[2], vy[2]);
        }
        case 5: {  // cross
            const float t = p.radius * (0.28f + 0.1f * p.aux);
            const float lim = p.radius;
            return (std::fabs(ru) <= t || std::fabs(rv) <= t) &&
                   std::max(std::fabs(ru), std::fabs(rv)) <= lim;
        }
        case 6: {  // twin discs
            const float off = p.radius * 0.55f;
            const float d1u = ru - off, d2u = ru + off;
            const float rr = p.radius * 0.45f;
            return (d1u * d1u + rv * rv <= rr * rr) || (d2u * d2u + rv * rv <= rr * rr);
        }
        case 7: {  // checker patch
            if (std::max(std::fabs(ru), std::fabs(rv)) > p.radius * 0.9f) return false;
            const float cell = p.radius * 0.45f;
            const int iu = static_cast<int>(std::floor(ru / cell));
            const int iv = static_cast<int>(std::floor(rv / cell));
            return ((iu + iv) & 1) == 0;
        }
        case 8: {  // stripes clipped to a disc
            if (r > p.radius) return false;
            const float k = 4.f + 3.f * p.aux;
            return std::sin(k * kPi * ru / p.radius) > 0.f;
        }
        case 9: {  // square outline
            const float m = std::max(std::fabs(ru), std::fabs(rv));
            return m <= p.radius * 0.9f && m >= p.radius * (0.5f + 0.15f * p.aux);
        }
        default:
            throw std::invalid_argument("inside_shape: unknown kind");
    }
}

}  // namespace

Tensor render_toy_sample(int class_id, int image_size, Rng& rng) {
    if (class_id < 0 || class_id >= 10) throw std::invalid_argument("render_toy_sample: class 0..9");
    const int ss = 4;  // supersampling factor
    const int big = image_size * ss;

    ShapeParams p;
    p.kind = class_id;
    p.cx = rng.uniform_range(-0.18f, 0.18f);
    p.cy = rng.uniform_range(-0.18f, 0.18f);
    p.radius = rng.uniform_range(0.42f, 0.68f);
    p.theta = rng.uniform_range(0.f, 2.f * kPi);
    p.aux = static_cast<float>(rng.uniform());

    const float hue = static_cast<float>(class_id) / 10.f + rng.uniform_range(-0.03f, 0.03f);
    const Rgb fg = hsv_to_rgb(hue, rng.uniform_range(0.6f, 0.95f), rng.uniform_range(0.6f, 0.98f));
    const Rgb bg1 = hsv_to_rgb(hue + 0.5f + rng.uniform_range(-0.15f, 0.15f),
                               rng.uniform_range(0.2f, 0.6f), rng.uniform_range(0.2f, 0.95f));
    const Rgb bg2 = hsv_to_rgb(hue + 0.5f + rng.uniform_range(-0.15f, 0.15f),
                               rng.uniform_range(0.2f, 0.6f), rng.uniform_range(0.2f, 0.95f));
    const float grad_angle = rng.uniform_range(0.f, 2.f * kPi);
    const float gax = std::cos(grad_angle), gay = std::sin(grad_angle);

    Tensor big_img(3, big, big);
    for (int y = 0; y < big; ++y) {
        for (int x = 0; x < big; ++x) {
            const float u = 2.f * (x + 0.5f) / big - 1.f;
            const float v = 2.f * (y + 0.5f) / big - 1.f;
            Rgb col;
            if (inside_shape(p, u, v)) {
                col = fg;
            } else {
                const float t = 0.5f + 0.5f * (u * gax + v * gay);
                col = {bg1.r + (bg2.r - bg1.r) * t, bg1.g + (bg2.g - bg1.g) * t,
                       bg1.b + (bg2.b - bg1.b) * t};
            }
            big_img.at(0, y, x) = col.r * 2.f - 1.f;
            big_img.at(1, y, x) = col.g * 2.f - 1.f;
            big_img.at(2, y, x) = col.b * 2.f - 1.f;
        }
    }

    // box downsample
    Tensor out(3, image_size, image_size);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x) {
                float acc = 0.f;
                for (int dy = 0; dy < ss; ++dy)
                    for (int dx = 0; dx < ss; ++dx) acc += big_img.at(c, y * ss + dy, x * ss + dx);
                out.at(c, y, x) = acc / (ss * ss);
            }

    // sharpness and sensor-noise diversity; always somewhat soft so the
    // latent bottleneck can carry the edges
    const float blur_sigma = rng.uniform_range(0.6f, 1.2f);
    out = imageops::gaussian_blur(out, blur_sigma);
    const float noise_sigma = rng.uniform_range(0.0f, 0.01f);
    if (noise_sigma > 0.f)
        for (int i = 0; i < out.size(); ++i) out[i] += noise_sigma * rng.normalf();

    out.clamp(-1.f, 1.f);
    return out;
}

std::string generate_toy_dataset(const ToyDatasetConfig& cfg, const std::string& out_dir) {
    if (cfg.n_classes != 10) throw std::invalid_argument("toy dataset renders exactly 10 classes");
    if (cfg.train_count <= 0 || cfg.val_count < 0 || cfg.test_count < 0)
        throw std::invalid_argument("toy dataset: bad split sizes");

    fs::create_directories(fs::path(out_dir) / "images");
    DatasetManifest manifest;
    manifest.root = out_dir;

    Rng root(cfg.seed);
    const int total = cfg.train_count + cfg.val_count + cfg.test_count;
    for (int i = 0; i < total; ++i) {
        const int class_id = i % cfg.n_classes;
        Rng sample_rng = root.substream("toy_sample", static_cast<uint64_t>(i));
        const Tensor x = render_toy_sample(class_id, cfg.image_size, sample_rng);

        char name[64];
        std::snprintf(name, sizeof(name), "real_%05d.png", i);
        const std::string rel = std::string("images/") + name;
        img::save_png(img::to_image_u8(x), (fs::path(out_dir) / rel).string());

        ManifestRecord r;
        r.id = std::string("real_") + std::to_string(i);
        r.path = rel;
        r.label = 0;
        r.generator = "toy_real";
        r.split = i < cfg.train_count ? "train"
                  : (i < cfg.train_count + cfg.val_count ? "val" : "test");
        r.class_id = class_id;
        manifest.records.push_back(std::move(r));
    }
    const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    manifest.save(manifest_path);
    return manifest_path;
}

}  // namespace invdet::data
