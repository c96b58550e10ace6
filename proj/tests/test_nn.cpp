// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "invdet/nn.hpp"

using namespace invdet;
using namespace invdet::nn;

namespace {

Tensor random_tensor(Shape3 s, Rng& rng) {
    Tensor t(s);
    for (int i = 0; i < t.size(); ++i) t[i] = rng.normalf();
    return t;
}

// loss(y) = sum(y .* r): a fixed random projection makes every output matter.
float proj_loss(const Tensor& y, const Tensor& r) {
    double acc = 0;
    for (int i = 0; i < y.size(); ++i) acc += static_cast<double>(y[i]) * r[i];
    return static_cast<float>(acc);
}

// Relative agreement between analytic and central-difference gradients of a
// scalar function over a float array.
void check_grad(std::vector<float>& values, const std::vector<float>& analytic,
                const std::function<float()>& loss_fn, float h = 1e-3f, float tol = 2e-2f) {
    REQUIRE(values.size() == analytic.size());
    double num_norm = 0, diff_norm = 0;
    for (size_t i = 0; i < values.size(); ++i) {
        const float keep = values[i];
        values[i] = keep + h;
        const float lp = loss_fn();
        values[i] = keep - h;
        const float lm = loss_fn();
        values[i] = keep;
        const double num = (static_cast<double>(lp) - lm) / (2.0 * h);
        num_norm += num * num;
        diff_norm += (num - analytic[i]) * (num - analytic[i]);
    }
    CHECK(std::sqrt(diff_norm) <= tol * (std::sqrt(num_norm) + 1e-6));
}

}  // namespace

TEST_CASE("conv2d gradients (stride 1 and 2) match finite differences") {
    for (int stride : {1, 2}) {
        Rng rng(101 + stride);
        Conv2d conv;
        conv.init(2, 3, 3, stride, 1, rng);
        Tensor x = random_tensor({2, 6, 6}, rng);
        Tensor r = random_tensor(conv.out_shape(x.shape()), rng);

        auto loss = [&]() {
            Conv2d c2 = conv;  // fresh cache
            return proj_loss(c2.forward(x), r);
        };

        conv.forward(x);
        Tensor gx = conv.backward(r);

        check_grad(conv.w, conv.gw, loss);
        check_grad(conv.b, conv.gb, loss);
        check_grad(x.raw(), gx.raw(), [&]() {
            Conv2d c2 = conv;
            return proj_loss(c2.forward(x), r);
        });
    }
}

TEST_CASE("groupnorm gradients match finite differences") {
    Rng rng(107);
    GroupNorm gn;
    gn.init(4, 2);
    for (auto& v : gn.gamma) v = 1.f + 0.3f * rng.normalf();
    for (auto& v : gn.beta) v = 0.2f * rng.normalf();
    Tensor x = random_tensor({4, 5, 5}, rng);
    Tensor r = random_tensor({4, 5, 5}, rng);

    auto loss = [&]() {
        GroupNorm g2 = gn;
        return proj_loss(g2.forward(x), r);
    };
    gn.forward(x);
    Tensor gx = gn.backward(r);
    check_grad(gn.gamma, gn.ggamma, loss);
    check_grad(gn.beta, gn.gbeta, loss);
    check_grad(x.raw(), gx.raw(), loss, 1e-3f, 3e-2f);
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(109);
    Linear lin;
    lin.init(7, 4, rng);
    Vec x(7);
    for (auto& v : x) v = rng.normalf();
    Vec r(4);
    for (auto& v : r) v = rng.normalf();

    auto loss = [&]() {
        Linear l2 = lin;
        Vec y = l2.forward(x);
        double acc = 0;
        for (size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(y[i]) * r[i];
        return static_cast<float>(acc);
    };
    lin.forward(x);
    Vec gx = lin.backward(r);
    check_grad(lin.w, lin.gw, loss);
    check_grad(lin.b, lin.gb, loss);
    check_grad(x, gx, loss);
}

TEST_CASE("activation gradients match finite differences") {
    Rng rng(113);
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor r = random_tensor({2, 4, 4}, rng);

    SiLU silu;
    silu.forward(x);
    Tensor gx = silu.backward(r);
    check_grad(x.raw(), gx.raw(), [&]() {
        SiLU s2;
        return proj_loss(s2.forward(x), r);
    });

    TanhLayer th;
    th.forward(x);
    Tensor gxt = th.backward(r);
    check_grad(x.raw(), gxt.raw(), [&]() {
        TanhLayer t2;
        return proj_loss(t2.forward(x), r);
    });
}

TEST_CASE("upsample and pooling are exact adjoints") {
    Rng rng(127);
    Tensor x = random_tensor({3, 4, 4}, rng);
    Tensor gy = random_tensor({3, 8, 8}, rng);
    // <up(x), gy> == <x, up^T(gy)>
    Tensor up = upsample2x_nearest(x);
    Tensor gx = upsample2x_backward(gy);
    double lhs = 0, rhs = 0;
    for (int i = 0; i < up.size(); ++i) lhs += static_cast<double>(up[i]) * gy[i];
    for (int i = 0; i < x.size(); ++i) rhs += static_cast<double>(x[i]) * gx[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));

    Vec g(3);
    for (auto& v : g) v = rng.normalf();
    Vec pooled = global_avg_pool(x);
    Tensor gpool = global_avg_pool_backward(g, x.shape());
    double lhs2 = 0, rhs2 = 0;
    for (int c = 0; c < 3; ++c) lhs2 += static_cast<double>(pooled[c]) * g[c];
    for (int i = 0; i < x.size(); ++i) rhs2 += static_cast<double>(x[i]) * gpool[i];
    CHECK(lhs2 == doctest::Approx(rhs2).epsilon(1e-5));
}

TEST_CASE("bce with logits: values and gradients") {
    float g = 0;
    const double l0 = bce_with_logit(0.f, 1, &g);
    CHECK(l0 == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(g == doctest::Approx(-0.5f).epsilon(1e-6));

    // numeric gradient
    for (float logit : {-3.f, -0.5f, 0.7f, 4.f}) {
        for (int label : {0, 1}) {
            float ga = 0;
            bce_with_logit(logit, label, &ga);
            const float h = 1e-2f;  // float argument: keep the step well above rounding
            const double num = (bce_with_logit(logit + h, label, nullptr) -
                                bce_with_logit(logit - h, label, nullptr)) /
                               (2.0 * h);
            CHECK(ga == doctest::Approx(num).epsilon(2e-3));
        }
    }
}

TEST_CASE("softmax cross entropy: gradient sums to zero and matches numerics") {
    Rng rng(131);
    Vec logits(5);
    for (auto& v : logits) v = rng.normalf();
    Vec grad;
    softmax_cross_entropy(logits, 2, &grad);
    double s = 0;
    for (float v : grad) s += v;
    CHECK(s == doctest::Approx(0.0).epsilon(1e-6));
    for (size_t i = 0; i < logits.size(); ++i) {
        const float h = 1e-3f;
        Vec lp = logits, lm = logits;
        lp[i] += h;
        lm[i] -= h;
        const double num =
            (softmax_cross_entropy(lp, 2, nullptr) - softmax_cross_entropy(lm, 2, nullptr)) /
            (2.0 * h);
        CHECK(grad[i] == doctest::Approx(num).epsilon(5e-3));
    }
}

TEST_CASE("adam drives a quadratic to its minimum deterministically") {
    auto run = [&]() {
        std::vector<float> w = {5.f, -3.f, 2.f};
        std::vector<float> g(3, 0.f);
        Adam opt({{&w, &g, "w"}}, {0.05f, 0.9f, 0.999f, 1e-8f});
        for (int it = 0; it < 400; ++it) {
            opt.zero_grad();
            for (int i = 0; i < 3; ++i) g[static_cast<size_t>(i)] = 2.f * w[static_cast<size_t>(i)];
            opt.step(1.f);
        }
        return w;
    };
    auto w1 = run();
    auto w2 = run();
    for (int i = 0; i < 3; ++i) {
        CHECK(std::fabs(w1[static_cast<size_t>(i)]) < 1e-2f);
        CHECK(w1[static_cast<size_t>(i)] == w2[static_cast<size_t>(i)]);  // bitwise repeatable
    }
}

TEST_CASE("embedding lookup and scatter-accumulate") {
    Rng rng(137);
    Embedding emb;
    emb.init(6, 4, rng);
    Vec row = emb.forward(3);
    CHECK(row.size() == 4);
    CHECK_THROWS(emb.forward(6));
    Vec g = {1.f, 2.f, 3.f, 4.f};
    emb.backward(3, g);
    for (int i = 0; i < 4; ++i) CHECK(emb.gw[3 * 4 + i] == g[static_cast<size_t>(i)]);
}

TEST_CASE("sinusoidal embedding is bounded and t-sensitive") {
    Vec a = sinusoidal_embedding(10.f, 32);
    Vec b = sinusoidal_embedding(11.f, 32);
    CHECK(a.size() == 32);
    float diff = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(std::fabs(a[i]) <= 1.f + 1e-6f);
        diff += std::fabs(a[i] - b[i]);
    }
    CHECK(diff > 1e-3f);
}

TEST_CASE("params_checksum reflects content") {
    std::vector<float> w = {1.f, 2.f};
    std::vector<float> g(2, 0.f);
    std::vector<ParamRef> refs = {{&w, &g, "w"}};
    const uint64_t h1 = params_checksum(refs);
    w[0] = 1.5f;
    CHECK(params_checksum(refs) != h1);
}
