// SPDX-License-Identifier: Apache-2.0
#include "invdet/nn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>

namespace invdet::nn {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Eigen::MatrixXf;

namespace {

inline float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// Receptive-field unfolding: column n holds the k*k*in_c patch feeding
// output position n. Out-of-bounds taps read zero. The col matrix is
// row-major so a fixed (c,ky,kx) tap sweeps output positions contiguously,
// and stride-1 rows copy in one contiguous run.
void im2col(const Tensor& x, int k, int stride, int pad, int oh, int ow,
            std::vector<float>& buf) {
    const int in_c = x.channels(), h = x.height(), w = x.width();
    buf.assign(static_cast<size_t>(in_c) * k * k * oh * ow, 0.f);
    Eigen::Map<MatrixRM> col(buf.data(), in_c * k * k, oh * ow);
    for (int c = 0; c < in_c; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const int row = (c * k + ky) * k + kx;
                float* dst_row = col.data() + static_cast<size_t>(row) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const float* src = x.data() + (static_cast<size_t>(c) * h + iy) * w;
                    float* dst = dst_row + oy * ow;
                    if (stride == 1) {
                        const int ox_lo = std::max(0, pad - kx);
                        const int ox_hi = std::min(ow, w + pad - kx);
                        if (ox_hi > ox_lo)
                            std::memcpy(dst + ox_lo, src + ox_lo + kx - pad,
                                        static_cast<size_t>(ox_hi - ox_lo) * sizeof(float));
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < w) dst[ox] = src[ix];
                        }
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const Eigen::Ref<const MatrixRM>& col, int k, int stride, int pad, int oh, int ow, Tensor& gx) {
    const int in_c = gx.channels(), h = gx.height(), w = gx.width();
    for (int c = 0; c < in_c; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const int row = (c * k + ky) * k + kx;
                const float* src_row = col.data() + static_cast<size_t>(row) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    float* dst = &gx.at(c, iy, 0);
                    const float* src = src_row + oy * ow;
                    if (stride == 1) {
                        const int ox_lo = std::max(0, pad - kx);
                        const int ox_hi = std::min(ow, w + pad - kx);
                        for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox + kx - pad] += src[ox];
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < w) dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

void kaiming_uniform(std::vector<float>& w, int fan_in, Rng& rng, float gain) {
    const float bound = std::sqrt(3.0f) * gain / std::sqrt(static_cast<float>(fan_in));
    for (auto& v : w) v = rng.uniform_range(-bound, bound);
}

}  // namespace

void Conv2d::init(int in_channels, int out_channels, int kernel, int stride_, int pad_, Rng& rng) {
    in_c = in_channels;
    out_c = out_channels;
    k = kernel;
    stride = stride_;
    pad = pad_;
    w.assign(static_cast<size_t>(out_c) * in_c * k * k, 0.f);
    b.assign(static_cast<size_t>(out_c), 0.f);
    gw.assign(w.size(), 0.f);
    gb.assign(b.size(), 0.f);
    kaiming_uniform(w, in_c * k * k, rng, std::sqrt(2.0f));
}

void Conv2d::init_zero_weights() {
    std::fill(w.begin(), w.end(), 0.f);
    std::fill(b.begin(), b.end(), 0.f);
}

Shape3 Conv2d::out_shape(const Shape3& in) const {
    return {out_c, (in.h + 2 * pad - k) / stride + 1, (in.w + 2 * pad - k) / stride + 1};
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.channels() != in_c) throw std::invalid_argument("Conv2d: channel mismatch");
    x_cache = x;
    const Shape3 os = out_shape(x.shape());
    im2col(x, k, stride, pad, os.h, os.w, col_buf);
    col_rows = in_c * k * k;
    col_cols = os.h * os.w;
    Eigen::Map<const MatrixRM> col(col_buf.data(), col_rows, col_cols);
    Eigen::Map<const MatrixRM> wm(w.data(), out_c, in_c * k * k);
    MatrixXf y = wm * col;  // out_c x (oh*ow)
    Tensor out(os);
    for (int c = 0; c < out_c; ++c) {
        const float bias = b[static_cast<size_t>(c)];
        for (int n = 0; n < os.h * os.w; ++n)
            out.data()[c * os.h * os.w + n] = y(c, n) + bias;
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& gy) {
    const Shape3 os = gy.shape();
    const int n_pos = os.h * os.w;
    if (col_rows != in_c * k * k || col_cols != n_pos) {
        im2col(x_cache, k, stride, pad, os.h, os.w, col_buf);
        col_rows = in_c * k * k;
        col_cols = n_pos;
    }
    Eigen::Map<const MatrixRM> col(col_buf.data(), col_rows, col_cols);
    Eigen::Map<const MatrixRM> gym(gy.data(), out_c, n_pos);

    MatrixXf gwm = gym * col.transpose();
    Eigen::Map<MatrixRM> gw_map(gw.data(), out_c, in_c * k * k);
    gw_map += gwm;
    for (int c = 0; c < out_c; ++c) gb[static_cast<size_t>(c)] += gym.row(c).sum();

    Eigen::Map<const MatrixRM> wm(w.data(), out_c, in_c * k * k);
    MatrixRM gcol = wm.transpose() * gym;
    Tensor gx(x_cache.shape());
    col2im_accumulate(gcol, k, stride, pad, os.h, os.w, gx);
    return gx;
}

void Conv2d::collect(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({&w, &gw, prefix + ".w"});
    out.push_back({&b, &gb, prefix + ".b"});
}

void Linear::init(int in, int out, Rng& rng) {
    in_n = in;
    out_n = out;
    w.assign(static_cast<size_t>(out) * in, 0.f);
    b.assign(static_cast<size_t>(out), 0.f);
    gw.assign(w.size(), 0.f);
    gb.assign(b.size(), 0.f);
    kaiming_uniform(w, in, rng, 1.0f);
}

Vec Linear::forward(const Vec& x) {
    if (static_cast<int>(x.size()) != in_n) throw std::invalid_argument("Linear: size mismatch");
    x_cache = x;
    Vec y(static_cast<size_t>(out_n));
    for (int o = 0; o < out_n; ++o) {
        const float* row = w.data() + static_cast<size_t>(o) * in_n;
        double acc = b[static_cast<size_t>(o)];
        for (int i = 0; i < in_n; ++i) acc += static_cast<double>(row[i]) * x[static_cast<size_t>(i)];
        y[static_cast<size_t>(o)] = static_cast<float>(acc);
    }
    return y;
}

Vec Linear::backward(const Vec& gy) {
    Vec gx(static_cast<size_t>(in_n), 0.f);
    for (int o = 0; o < out_n; ++o) {
        const float g = gy[static_cast<size_t>(o)];
        gb[static_cast<size_t>(o)] += g;
        float* grow = gw.data() + static_cast<size_t>(o) * in_n;
        const float* row = w.data() + static_cast<size_t>(o) * in_n;
        for (int i = 0; i < in_n; ++i) {
            grow[i] += g * x_cache[static_cast<size_t>(i)];
            gx[static_cast<size_t>(i)] += g * row[i];
        }
    }
    return gx;
}

void Linear::collect(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({&w, &gw, prefix + ".w"});
    out.push_back({&b, &gb, prefix + ".b"});
}

void GroupNorm::init(int channels_, int groups_) {
    if (channels_ % groups_ != 0) throw std::invalid_argument("GroupNorm: channels % groups != 0");
    channels = channels_;
    groups = groups_;
    gamma.assign(static_cast<size_t>(channels), 1.f);
    beta.assign(static_cast<size_t>(channels), 0.f);
    ggamma.assign(static_cast<size_t>(channels), 0.f);
    gbeta.assign(static_cast<size_t>(channels), 0.f);
}

Tensor GroupNorm::forward(const Tensor& x) {
    if (x.channels() != channels) throw std::invalid_argument("GroupNorm: channel mismatch");
    x_cache = x;
    const int cpg = channels / groups;
    const int hw = x.height() * x.width();
    mu_cache.assign(static_cast<size_t>(groups), 0.f);
    inv_std_cache.assign(static_cast<size_t>(groups), 0.f);
    Tensor y(x.shape());
    for (int g = 0; g < groups; ++g) {
        const float* base = x.data() + static_cast<size_t>(g) * cpg * hw;
        const int n = cpg * hw;
        double s = 0, s2 = 0;
        for (int i = 0; i < n; ++i) {
            s += base[i];
            s2 += static_cast<double>(base[i]) * base[i];
        }
        const double mu = s / n;
        const double var = s2 / n - mu * mu;
        const float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps));
        mu_cache[static_cast<size_t>(g)] = static_cast<float>(mu);
        inv_std_cache[static_cast<size_t>(g)] = inv_std;
        for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
            const float gm = gamma[static_cast<size_t>(c)];
            const float bt = beta[static_cast<size_t>(c)];
            for (int i = 0; i < hw; ++i) {
                const float xn = (x.data()[c * hw + i] - static_cast<float>(mu)) * inv_std;
                y.data()[c * hw + i] = gm * xn + bt;
            }
        }
    }
    return y;
}

Tensor GroupNorm::backward(const Tensor& gy) {
    const int cpg = channels / groups;
    const int hw = x_cache.height() * x_cache.width();
    Tensor gx(x_cache.shape());
    for (int g = 0; g < groups; ++g) {
        const int n = cpg * hw;
        const float mu = mu_cache[static_cast<size_t>(g)];
        const float inv_std = inv_std_cache[static_cast<size_t>(g)];
        // accumulate per-group reductions of gxhat and gxhat*xhat
        double sum_gxh = 0.0, sum_gxh_xh = 0.0;
        for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
            const float gm = gamma[static_cast<size_t>(c)];
            for (int i = 0; i < hw; ++i) {
                const float xh = (x_cache.data()[c * hw + i] - mu) * inv_std;
                const float gyv = gy.data()[c * hw + i];
                ggamma[static_cast<size_t>(c)] += gyv * xh;
                gbeta[static_cast<size_t>(c)] += gyv;
                const float gxh = gyv * gm;
                sum_gxh += gxh;
                sum_gxh_xh += static_cast<double>(gxh) * xh;
            }
        }
        const float mean_gxh = static_cast<float>(sum_gxh / n);
        const float mean_gxh_xh = static_cast<float>(sum_gxh_xh / n);
        for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
            const float gm = gamma[static_cast<size_t>(c)];
            for (int i = 0; i < hw; ++i) {
                const float xh = (x_cache.data()[c * hw + i] - mu) * inv_std;
                const float gxh = gy.data()[c * hw + i] * gm;
                gx.data()[c * hw + i] = inv_std * (gxh - mean_gxh - xh * mean_gxh_xh);
            }
        }
    }
    return gx;
}

void GroupNorm::collect(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({&gamma, &ggamma, prefix + ".gamma"});
    out.push_back({&beta, &gbeta, prefix + ".beta"});
}

Tensor SiLU::forward(const Tensor& x) {
    x_cache = x;
    Tensor y(x.shape());
    for (int i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoidf(x[i]);
    return y;
}

Tensor SiLU::backward(const Tensor& gy) {
    Tensor gx(x_cache.shape());
    for (int i = 0; i < gx.size(); ++i) {
        const float s = sigmoidf(x_cache[i]);
        gx[i] = gy[i] * s * (1.f + x_cache[i] * (1.f - s));
    }
    return gx;
}

Vec SiLUVec::forward(const Vec& x) {
    x_cache = x;
    Vec y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoidf(x[i]);
    return y;
}

Vec SiLUVec::backward(const Vec& gy) {
    Vec gx(x_cache.size());
    for (size_t i = 0; i < gx.size(); ++i) {
        const float s = sigmoidf(x_cache[i]);
        gx[i] = gy[i] * s * (1.f + x_cache[i] * (1.f - s));
    }
    return gx;
}

Tensor TanhLayer::forward(const Tensor& x) {
    Tensor y(x.shape());
    for (int i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
    y_cache = y;
    return y;
}

Tensor TanhLayer::backward(const Tensor& gy) {
    Tensor gx(y_cache.shape());
    for (int i = 0; i < gx.size(); ++i) gx[i] = gy[i] * (1.f - y_cache[i] * y_cache[i]);
    return gx;
}

void Embedding::init(int count, int dim, Rng& rng) {
    n = count;
    d = dim;
    w.assign(static_cast<size_t>(n) * d, 0.f);
    gw.assign(w.size(), 0.f);
    for (auto& v : w) v = rng.normalf() * 0.5f;
}

Vec Embedding::forward(int index) const {
    if (index < 0 || index >= n) throw std::out_of_range("Embedding: index out of range");
    const float* row = w.data() + static_cast<size_t>(index) * d;
    return Vec(row, row + d);
}

void Embedding::backward(int index, const Vec& g) {
    float* row = gw.data() + static_cast<size_t>(index) * d;
    for (int i = 0; i < d; ++i) row[i] += g[static_cast<size_t>(i)];
}

void Embedding::collect(std::vector<ParamRef>& out, const std::string& prefix) {
    out.push_back({&w, &gw, prefix + ".w"});
}

Tensor upsample2x_nearest(const Tensor& x) {
    Tensor y(x.channels(), x.height() * 2, x.width() * 2);
    for (int c = 0; c < x.channels(); ++c)
        for (int iy = 0; iy < y.height(); ++iy)
            for (int ix = 0; ix < y.width(); ++ix) y.at(c, iy, ix) = x.at(c, iy / 2, ix / 2);
    return y;
}

Tensor upsample2x_backward(const Tensor& gy) {
    Tensor gx(gy.channels(), gy.height() / 2, gy.width() / 2);
    for (int c = 0; c < gy.channels(); ++c)
        for (int iy = 0; iy < gy.height(); ++iy)
            for (int ix = 0; ix < gy.width(); ++ix) gx.at(c, iy / 2, ix / 2) += gy.at(c, iy, ix);
    return gx;
}

Tensor depth_to_space2(const Tensor& x) {
    if (x.channels() % 4 != 0) throw std::invalid_argument("depth_to_space2: channels % 4 != 0");
    const int oc = x.channels() / 4;
    Tensor y(oc, x.height() * 2, x.width() * 2);
    for (int c = 0; c < oc; ++c)
        for (int iy = 0; iy < x.height(); ++iy)
            for (int ix = 0; ix < x.width(); ++ix)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        y.at(c, iy * 2 + dy, ix * 2 + dx) = x.at(c * 4 + dy * 2 + dx, iy, ix);
    return y;
}

Tensor depth_to_space2_backward(const Tensor& gy) {
    const int oc = gy.channels();
    Tensor gx(oc * 4, gy.height() / 2, gy.width() / 2);
    for (int c = 0; c < oc; ++c)
        for (int iy = 0; iy < gx.height(); ++iy)
            for (int ix = 0; ix < gx.width(); ++ix)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        gx.at(c * 4 + dy * 2 + dx, iy, ix) = gy.at(c, iy * 2 + dy, ix * 2 + dx);
    return gx;
}

Vec global_avg_pool(const Tensor& x) {
    const int hw = x.height() * x.width();
    Vec y(static_cast<size_t>(x.channels()));
    for (int c = 0; c < x.channels(); ++c) {
        double acc = 0;
        for (int i = 0; i < hw; ++i) acc += x.data()[c * hw + i];
        y[static_cast<size_t>(c)] = static_cast<float>(acc / hw);
    }
    return y;
}

Tensor global_avg_pool_backward(const Vec& g, const Shape3& in_shape) {
    Tensor gx(in_shape);
    const int hw = in_shape.h * in_shape.w;
    for (int c = 0; c < in_shape.c; ++c) {
        const float v = g[static_cast<size_t>(c)] / hw;
        for (int i = 0; i < hw; ++i) gx.data()[c * hw + i] = v;
    }
    return gx;
}

Vec sinusoidal_embedding(float t, int dim) {
    const int half = dim / 2;
    Vec emb(static_cast<size_t>(dim), 0.f);
    for (int i = 0; i < half; ++i) {
        const float freq =
            std::exp(-std::log(10000.0f) * static_cast<float>(i) / std::max(1, half - 1));
        emb[static_cast<size_t>(i)] = std::sin(t * freq);
        emb[static_cast<size_t>(half + i)] = std::cos(t * freq);
    }
    return emb;
}

double bce_with_logit(float logit, int label, float* grad) {
    const double l = logit;
    const double y = label;
    // max(l,0) - l*y + log(1 + exp(-|l|))
    const double loss = std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::fabs(l)));
    if (grad) *grad = static_cast<float>(1.0 / (1.0 + std::exp(-l)) - y);
    return loss;
}

double softmax_cross_entropy(const Vec& logits, int label, Vec* grad) {
    const size_t n = logits.size();
    float mx = logits[0];
    for (float v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    for (float v : logits) denom += std::exp(static_cast<double>(v) - mx);
    const double log_denom = std::log(denom) + mx;
    const double loss = log_denom - logits[static_cast<size_t>(label)];
    if (grad) {
        grad->assign(n, 0.f);
        for (size_t i = 0; i < n; ++i)
            (*grad)[i] = static_cast<float>(std::exp(static_cast<double>(logits[i]) - log_denom));
        (*grad)[static_cast<size_t>(label)] -= 1.f;
    }
    return loss;
}

Adam::Adam(std::vector<ParamRef> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.w->size(), 0.f);
        v_.emplace_back(p.w->size(), 0.f);
    }
}

void Adam::set_lr(float lr) { cfg_.lr = lr; }

void Adam::zero_grad() {
    for (auto& p : params_) std::fill(p.g->begin(), p.g->end(), 0.f);
}

void Adam::step(float grad_scale) {
    ++t_;
    const float bc1 = 1.f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& w = *params_[pi].w;
        auto& g = *params_[pi].g;
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < w.size(); ++i) {
            const float gi = g[i] * grad_scale;
            m[i] = cfg_.beta1 * m[i] + (1.f - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.f - cfg_.beta2) * gi * gi;
            const float mhat = m[i] / bc1;
            const float vhat = v[i] / bc2;
            w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

uint64_t params_checksum(const std::vector<ParamRef>& params) {
    Fnv1a64 h;
    for (const auto& p : params) {
        h.update_str(p.name);
        h.update(p.w->data(), p.w->size() * sizeof(float));
    }
    return h.digest();
}

}  // namespace invdet::nn
