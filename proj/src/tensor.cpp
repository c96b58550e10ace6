// SPDX-License-Identifier: Apache-2.0
#include "invdet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace invdet {

std::string Shape3::str() const {
    return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

Tensor Tensor::full(Shape3 s, float value) {
    Tensor t(s);
    t.fill(value);
    return t;
}

bool Tensor::all_finite() const {
    for (float x : v_)
        if (!std::isfinite(x)) return false;
    return true;
}

void Tensor::fill(float value) { std::fill(v_.begin(), v_.end(), value); }

void Tensor::clamp(float lo, float hi) {
    for (float& x : v_) x = std::min(hi, std::max(lo, x));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!(a.shape() == b.shape()))
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    float m = 0.f;
    for (int i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

float l2_norm(const Tensor& a) {
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * a[i];
    return static_cast<float>(std::sqrt(s));
}

float mean_abs(const Tensor& a) {
    if (a.size() == 0) return 0.f;
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += std::fabs(a[i]);
    return static_cast<float>(s / a.size());
}

double mean(const Tensor& a) {
    if (a.size() == 0) return 0.0;
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += a[i];
    return s / a.size();
}

double stddev(const Tensor& a) {
    if (a.size() == 0) return 0.0;
    const double m = mean(a);
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += (a[i] - m) * (a[i] - m);
    return std::sqrt(s / a.size());
}

bool all_finite(const Vec& v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

float dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return static_cast<float>(s);
}

float l2_norm(const Vec& a) { return std::sqrt(std::max(0.f, dot(a, a))); }

}  // namespace invdet
