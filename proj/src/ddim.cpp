// SPDX-License-Identifier: Apache-2.0
#include "invdet/ddim.hpp"

#include <algorithm>
#include <cmath>

namespace invdet::ddim {

float NoiseSchedule::alpha_bar_at(int t) const {
    if (t < 0 || t > T) throw std::out_of_range("alpha_bar_at: t=" + std::to_string(t));
    return alpha_bar[static_cast<size_t>(t)];
}

bool NoiseSchedule::contains_step(int t) const {
    return std::binary_search(step_indices.begin(), step_indices.end(), t);
}

void NoiseSchedule::validate() const {
    if (T <= 0) throw std::invalid_argument("NoiseSchedule: T must be positive");
    if (alpha_bar.size() != static_cast<size_t>(T) + 1)
        throw std::invalid_argument("NoiseSchedule: alpha_bar must have T+1 entries");
    if (alpha_bar[0] != 1.0f)
        throw std::invalid_argument("NoiseSchedule: alpha_bar[0] must be exactly 1");
    for (int t = 0; t <= T; ++t) {
        const float a = alpha_bar[static_cast<size_t>(t)];
        if (!(a > 0.0f && a <= 1.0f))
            throw std::invalid_argument("NoiseSchedule: alpha_bar out of (0,1] at t=" + std::to_string(t));
        if (t > 0 && !(a < alpha_bar[static_cast<size_t>(t) - 1]))
            throw std::invalid_argument("NoiseSchedule: alpha_bar not strictly decreasing at t=" +
                                        std::to_string(t));
    }
    if (step_indices.size() < 2 || step_indices.front() != 0 || step_indices.back() != T)
        throw std::invalid_argument("NoiseSchedule: step_indices must run from 0 to T");
    for (size_t i = 1; i < step_indices.size(); ++i)
        if (step_indices[i] <= step_indices[i - 1])
            throw std::invalid_argument("NoiseSchedule: step_indices must be strictly increasing");
}

NoiseSchedule build_schedule(int T, double beta_start, double beta_end, BetaKind kind, int K) {
    if (T <= 0) throw std::invalid_argument("build_schedule: T must be positive");
    if (K <= 0) throw std::invalid_argument("build_schedule: K must be positive");
    if (K > T) throw std::invalid_argument("build_schedule: K must not exceed T");
    if (beta_start < 0.0 || beta_end < beta_start || beta_end >= 1.0)
        throw std::invalid_argument("build_schedule: betas must satisfy 0 <= beta_start <= beta_end < 1");

    // betas interpolated over t = 1..T; the cumulative product is carried in
    // double, otherwise 1000 float multiplies visibly drift.
    NoiseSchedule s;
    s.T = T;
    s.alpha_bar.resize(static_cast<size_t>(T) + 1);
    s.alpha_bar[0] = 1.0f;
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        double beta;
        if (kind == BetaKind::Linear) {
            beta = beta_start + frac * (beta_end - beta_start);
        } else {
            const double b = std::sqrt(beta_start) + frac * (std::sqrt(beta_end) - std::sqrt(beta_start));
            beta = b * b;
        }
        prod *= 1.0 - beta;
        s.alpha_bar[static_cast<size_t>(t)] = static_cast<float>(prod);
    }

    // K+1 evenly spaced indices, endpoints included, spacing ties rounded down.
    s.step_indices.resize(static_cast<size_t>(K) + 1);
    for (int j = 0; j <= K; ++j)
        s.step_indices[static_cast<size_t>(j)] = static_cast<int>((static_cast<int64_t>(j) * T) / K);

    s.validate();
    return s;
}

Tensor predict_clean(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& sched) {
    require_same_shape(z_t, eps, "predict_clean");
    const float a = sched.alpha_bar_at(t);
    if (!(a > 0.0f)) throw std::invalid_argument("predict_clean: alpha_bar must be positive");
    const float inv_sqrt_a = 1.0f / std::sqrt(a);
    const float sqrt_1ma = std::sqrt(1.0f - a);
    Tensor out(z_t.shape());
    for (int i = 0; i < z_t.size(); ++i) out[i] = (z_t[i] - sqrt_1ma * eps[i]) * inv_sqrt_a;
    return out;
}

namespace {

Tensor ddim_step(const Tensor& z_t, int t_from, int t_to, const EpsFn& eps_fn, const Vec& c,
                 const NoiseSchedule& sched) {
    if (!sched.contains_step(t_from) || !sched.contains_step(t_to))
        throw std::invalid_argument("ddim step: timesteps must belong to step_indices");
    const Tensor e = eps_fn(z_t, t_from, c);
    require_same_shape(z_t, e, "ddim step (eps output)");
    const Tensor f = predict_clean(z_t, t_from, e, sched);
    const float a_to = sched.alpha_bar_at(t_to);
    const float sqrt_a = std::sqrt(a_to);
    const float sqrt_1ma = std::sqrt(1.0f - a_to);
    Tensor out(z_t.shape());
    for (int i = 0; i < z_t.size(); ++i) out[i] = sqrt_a * f[i] + sqrt_1ma * e[i];
    return out;
}

}  // namespace

Tensor ddim_forward_step(const Tensor& z_t, int t_from, int t_to, const EpsFn& eps_fn,
                         const Vec& c, const NoiseSchedule& sched) {
    if (!(t_to > t_from)) throw std::invalid_argument("ddim_forward_step: requires t_to > t_from");
    return ddim_step(z_t, t_from, t_to, eps_fn, c, sched);
}

Tensor ddim_reverse_step(const Tensor& z_t, int t_from, int t_to, const EpsFn& eps_fn,
                         const Vec& c, const NoiseSchedule& sched) {
    if (!(t_to < t_from)) throw std::invalid_argument("ddim_reverse_step: requires t_to < t_from");
    return ddim_step(z_t, t_from, t_to, eps_fn, c, sched);
}

Tensor invert_F(const Tensor& z_0, const Vec& c, const EpsFn& eps_fn, const NoiseSchedule& sched) {
    sched.validate();
    if (!z_0.all_finite()) throw std::invalid_argument("invert_F: non-finite input latent");
    Tensor z = z_0;
    const auto& idx = sched.step_indices;
    for (size_t j = 0; j + 1 < idx.size(); ++j)
        z = ddim_forward_step(z, idx[j], idx[j + 1], eps_fn, c, sched);
    return z;
}

Tensor reconstruct_R(const Tensor& z_T, const Vec& c, const EpsFn& eps_fn, const NoiseSchedule& sched) {
    sched.validate();
    if (!z_T.all_finite()) throw std::invalid_argument("reconstruct_R: non-finite input latent");
    Tensor z = z_T;
    const auto& idx = sched.step_indices;
    for (size_t j = idx.size() - 1; j > 0; --j)
        z = ddim_reverse_step(z, idx[j], idx[j - 1], eps_fn, c, sched);
    return z;
}

}  // namespace invdet::ddim
