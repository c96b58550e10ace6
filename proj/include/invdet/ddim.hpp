// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "invdet/tensor.hpp"

namespace invdet::ddim {

/// Noise prediction callback. Implementations must be deterministic
/// (identical inputs -> identical outputs) and either internally thread-safe
/// or externally serialized; the DDIM traversal itself never mutates shared
/// state, so concurrency is bounded by the callback alone.
using EpsFn = std::function<Tensor(const Tensor& z_t, int t, const Vec& c)>;

enum class BetaKind { Linear, ScaledLinear };

/// Cumulative noise scaling for a DDIM traversal: alpha_bar[0..T] with
/// alpha_bar[0] == 1, strictly decreasing, plus the K+1 step indices used
/// for the coarse traversal (always including 0 and T).
struct NoiseSchedule {
    int T = 0;
    std::vector<float> alpha_bar;    // size T+1
    std::vector<int> step_indices;   // size K+1, strictly increasing, [0 .. T]

    int steps() const { return static_cast<int>(step_indices.size()) - 1; }
    float alpha_bar_at(int t) const;
    bool contains_step(int t) const;
    void validate() const;
};

/// Builds alpha_bar from a linear (or sqrt-space linear) beta ramp,
/// accumulating the product in 64-bit before narrowing to float.
NoiseSchedule build_schedule(int T, double beta_start, double beta_end, BetaKind kind, int K);

/// Current estimate of the clean latent: (z_t - sqrt(1-a_t) * eps) / sqrt(a_t).
Tensor predict_clean(const Tensor& z_t, int t, const Tensor& eps, const NoiseSchedule& sched);

/// One noising step t_from -> t_to (t_to > t_from), eps evaluated at t_from.
Tensor ddim_forward_step(const Tensor& z_t, int t_from, int t_to, const EpsFn& eps_fn,
                         const Vec& c, const NoiseSchedule& sched);

/// One denoising step t_from -> t_to (t_to < t_from), eps evaluated at t_from.
Tensor ddim_reverse_step(const Tensor& z_t, int t_from, int t_to, const EpsFn& eps_fn,
                         const Vec& c, const NoiseSchedule& sched);

/// Full inversion: folds forward steps over the schedule, clean latent -> noise map.
Tensor invert_F(const Tensor& z_0, const Vec& c, const EpsFn& eps_fn, const NoiseSchedule& sched);

/// Full reconstruction: folds reverse steps over the schedule, noise map -> clean latent.
Tensor reconstruct_R(const Tensor& z_T, const Vec& c, const EpsFn& eps_fn, const NoiseSchedule& sched);

}  // namespace invdet::ddim
