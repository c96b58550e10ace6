// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace invdet {

struct Shape3 {
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Shape3&) const = default;
    int size() const { return c * h * w; }
    std::string str() const;
};

/// Dense CHW float32 tensor. The workhorse type for images and latents.
class Tensor {
public:
    Tensor() = default;
    Tensor(int c, int h, int w) : shape_{c, h, w}, v_(static_cast<size_t>(c) * h * w, 0.f) {}
    explicit Tensor(Shape3 s) : Tensor(s.c, s.h, s.w) {}

    static Tensor full(Shape3 s, float value);

    const Shape3& shape() const { return shape_; }
    int channels() const { return shape_.c; }
    int height() const { return shape_.h; }
    int width() const { return shape_.w; }
    int size() const { return static_cast<int>(v_.size()); }
    bool empty() const { return v_.empty(); }

    float* data() { return v_.data(); }
    const float* data() const { return v_.data(); }

    float& at(int c, int y, int x) { return v_[(static_cast<size_t>(c) * shape_.h + y) * shape_.w + x]; }
    float at(int c, int y, int x) const { return v_[(static_cast<size_t>(c) * shape_.h + y) * shape_.w + x]; }

    float& operator[](size_t i) { return v_[i]; }
    float operator[](size_t i) const { return v_[i]; }

    std::vector<float>& raw() { return v_; }
    const std::vector<float>& raw() const { return v_; }

    bool all_finite() const;
    void fill(float value);
    void clamp(float lo, float hi);

private:
    Shape3 shape_;
    std::vector<float> v_;
};

using Vec = std::vector<float>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

float max_abs_diff(const Tensor& a, const Tensor& b);
float l2_norm(const Tensor& a);
float mean_abs(const Tensor& a);
double mean(const Tensor& a);
double stddev(const Tensor& a);

bool all_finite(const Vec& v);
float dot(const Vec& a, const Vec& b);
float l2_norm(const Vec& a);

}  // namespace invdet
