// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "invdet/rng.hpp"
#include "invdet/tensor.hpp"

namespace invdet::nn {

/// One trainable array and its gradient buffer. Registration order is the
/// optimizer's iteration order, so it must be deterministic per network.
struct ParamRef {
    std::vector<float>* w = nullptr;
    std::vector<float>* g = nullptr;
    std::string name;
};

struct Conv2d {
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    std::vector<float> w, b, gw, gb;  // w laid out [out_c][in_c*k*k]
    Tensor x_cache;
    std::vector<float> col_buf;  // unfolded input kept from forward for backward
    int col_rows = 0, col_cols = 0;

    void init(int in_channels, int out_channels, int kernel, int stride_, int pad_, Rng& rng);
    void init_zero_weights();  // keeps shapes, zeroes w and b
    Shape3 out_shape(const Shape3& in) const;
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy);
    void collect(std::vector<ParamRef>& out, const std::string& prefix);
};

struct Linear {
    int in_n = 0, out_n = 0;
    std::vector<float> w, b, gw, gb;  // w laid out [out][in]
    Vec x_cache;

    void init(int in, int out, Rng& rng);
    Vec forward(const Vec& x);
    Vec backward(const Vec& gy);
    void collect(std::vector<ParamRef>& out, const std::string& prefix);
};

struct GroupNorm {
    int channels = 0, groups = 1;
    float eps = 1e-5f;
    std::vector<float> gamma, beta, ggamma, gbeta;
    Tensor x_cache;
    std::vector<float> mu_cache, inv_std_cache;  // per group

    void init(int channels_, int groups_);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy);
    void collect(std::vector<ParamRef>& out, const std::string& prefix);
};

struct SiLU {
    Tensor x_cache;
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy);
};

struct SiLUVec {
    Vec x_cache;
    Vec forward(const Vec& x);
    Vec backward(const Vec& gy);
};

struct TanhLayer {
    Tensor y_cache;
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& gy);
};

struct Embedding {
    int n = 0, d = 0;
    std::vector<float> w, gw;  // [n][d]

    void init(int count, int dim, Rng& rng);
    Vec forward(int index) const;
    void backward(int index, const Vec& g);
    void collect(std::vector<ParamRef>& out, const std::string& prefix);
};

Tensor upsample2x_nearest(const Tensor& x);
Tensor upsample2x_backward(const Tensor& gy);

/// Sub-pixel upsampling: [4c,h,w] -> [c,2h,2w] and its adjoint.
Tensor depth_to_space2(const Tensor& x);
Tensor depth_to_space2_backward(const Tensor& gy);

Vec global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Vec& g, const Shape3& in_shape);

/// Sinusoidal position features for an integer timestep.
Vec sinusoidal_embedding(float t, int dim);

/// Numerically safe binary cross-entropy on a logit; grad is d/d logit.
double bce_with_logit(float logit, int label, float* grad);

/// Log-softmax cross entropy over a logit vector; grad w.r.t. logits.
double softmax_cross_entropy(const Vec& logits, int label, Vec* grad);

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

class Adam {
public:
    Adam() = default;
    Adam(std::vector<ParamRef> params, AdamConfig cfg);

    void zero_grad();
    /// Applies one update; gradients are multiplied by grad_scale first
    /// (callers pass 1/batch_size after accumulating a batch).
    void step(float grad_scale);
    void set_lr(float lr);

private:
    std::vector<ParamRef> params_;
    AdamConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    int64_t t_ = 0;
};

/// Serialization helper: named float arrays in registration order.
uint64_t params_checksum(const std::vector<ParamRef>& params);

}  // namespace invdet::nn
