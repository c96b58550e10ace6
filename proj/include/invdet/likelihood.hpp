// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "invdet/rng.hpp"

namespace invdet::lab {

// All lab computations run in 64-bit; dense-oracle dimensions are capped.
inline constexpr int kMaxDenseDim = 32;

using DVec = std::vector<double>;
using VecFn = std::function<DVec(const DVec&)>;
using LogPdf = std::function<double(const DVec&)>;

double standard_normal_logpdf(const DVec& z);

/// Bijective map with both directions available. Construction probes the
/// round trip f(f_inv(x)) = x to 1e-6 on caller-supplied points.
struct FlowMap {
    VecFn forward;
    VecFn inverse;
    int dim = 0;

    static FlowMap create(VecFn forward, VecFn inverse, int dim,
                          const std::vector<DVec>& probe_points);
};

struct PerturbationDelta {
    DVec delta;  // finite, nonzero norm (validated where consumed)
};

/// Monte-Carlo trace estimate: mean over n standard-normal probes v of
/// <v, A v>. The caller guarantees apply_A is linear.
double hutchinson_trace(const VecFn& apply_A, int d, int n_probes, Rng& rng);

/// log |det J[f](x)| with the Jacobian assembled by central differences.
/// Throws if |det| falls below 1e-12.
double numeric_jacobian_logdet(const VecFn& f, const DVec& x, double fd_step);

/// base_logpdf(f_inv(x)) + log|det J[f_inv](x)|, the change-of-variables
/// density of the flow's pushforward at x.
double change_of_variables_logprob(const FlowMap& flow, const DVec& x,
                                   const LogPdf& base_logpdf, double fd_step = 1e-4);

/// Two-term first-order estimate: base_logpdf(z_T) - <delta, zhat_0 - z_0> / |delta|^2.
double first_order_logprob(const DVec& z_0, const DVec& z_hat_0, const DVec& z_T,
                           const PerturbationDelta& delta, const LogPdf& base_logpdf);

struct StageError {
    std::string name;
    double mean_error = 0.0;
    double max_error = 0.0;
};

/// Stage-by-stage audit of the first-order log-likelihood chain on random
/// near-identity flows f(u) = u + eps*(M u + a .* sin(u)):
///   exact      log|det J|
///   stage 1    trace series truncated after its linear term, Tr(J - I)
///   stage 2    Hutchinson probe average of Tr(J - I)
///   stage 3    single scaled-delta sample, <delta,(J-I)delta>/sigma^2
///   stage 4    Taylor replacement of the Jacobian action by a flow difference
/// Each error is the gap introduced by that stage relative to the previous
/// one. delta is drawn isotropic Gaussian with sigma = epsilon_scale.
struct DerivationReport {
    int dim = 0;
    double epsilon_scale = 0.0;
    int trials = 0;
    int hutchinson_probes = 0;
    uint64_t seed = 0;
    std::vector<StageError> stages;  // always 4 entries

    std::string to_json() const;
};

DerivationReport verify_derivation(int dim, double epsilon_scale, int n_trials, Rng& rng,
                                   int hutchinson_probes = 64);

/// Least-squares slope of log(y) against log(x); x and y must be positive.
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace invdet::lab
