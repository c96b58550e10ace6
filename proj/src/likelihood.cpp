// SPDX-License-Identifier: Apache-2.0
#include "invdet/likelihood.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace invdet::lab {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double dotd(const DVec& a, const DVec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

DVec gaussian_vec(int d, Rng& rng, double scale = 1.0) {
    DVec v(static_cast<size_t>(d));
    for (auto& x : v) x = rng.normal() * scale;
    return v;
}

double logabsdet(const Eigen::MatrixXd& m) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    const auto& u = lu.matrixLU();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        const double piv = std::fabs(u(i, i));
        if (piv == 0.0) return -std::numeric_limits<double>::infinity();
        acc += std::log(piv);
    }
    return acc;
}

}  // namespace

double standard_normal_logpdf(const DVec& z) {
    const double d = static_cast<double>(z.size());
    return -0.5 * d * std::log(kTwoPi) - 0.5 * dotd(z, z);
}

FlowMap FlowMap::create(VecFn forward, VecFn inverse, int dim,
                        const std::vector<DVec>& probe_points) {
    if (dim <= 0) throw std::invalid_argument("FlowMap: dimension must be positive");
    FlowMap f;
    f.forward = std::move(forward);
    f.inverse = std::move(inverse);
    f.dim = dim;
    for (const auto& p : probe_points) {
        if (static_cast<int>(p.size()) != dim)
            throw std::invalid_argument("FlowMap: probe point dimension mismatch");
        const DVec back = f.forward(f.inverse(p));
        for (int i = 0; i < dim; ++i)
            if (std::fabs(back[static_cast<size_t>(i)] - p[static_cast<size_t>(i)]) > 1e-6)
                throw std::invalid_argument("FlowMap: f(f_inv(x)) deviates beyond 1e-6 on probe");
    }
    return f;
}

double hutchinson_trace(const VecFn& apply_A, int d, int n_probes, Rng& rng) {
    if (d <= 0) throw std::invalid_argument("hutchinson_trace: dimension must be positive");
    if (n_probes < 1) throw std::invalid_argument("hutchinson_trace: need at least one probe");
    double acc = 0.0;
    for (int i = 0; i < n_probes; ++i) {
        const DVec v = gaussian_vec(d, rng);
        acc += dotd(v, apply_A(v));
    }
    return acc / n_probes;
}

double numeric_jacobian_logdet(const VecFn& f, const DVec& x, double fd_step) {
    const int d = static_cast<int>(x.size());
    if (d <= 0 || d > kMaxDenseDim)
        throw std::invalid_argument("numeric_jacobian_logdet: dimension outside dense range");
    if (!(fd_step > 0.0)) throw std::invalid_argument("numeric_jacobian_logdet: fd_step must be positive");

    Eigen::MatrixXd jac(d, d);
    DVec hi = x, lo = x;
    for (int j = 0; j < d; ++j) {
        hi[static_cast<size_t>(j)] = x[static_cast<size_t>(j)] + fd_step;
        lo[static_cast<size_t>(j)] = x[static_cast<size_t>(j)] - fd_step;
        const DVec fh = f(hi);
        const DVec fl = f(lo);
        if (static_cast<int>(fh.size()) != d || static_cast<int>(fl.size()) != d)
            throw std::invalid_argument("numeric_jacobian_logdet: flow is not square");
        for (int i = 0; i < d; ++i)
            jac(i, j) = (fh[static_cast<size_t>(i)] - fl[static_cast<size_t>(i)]) / (2.0 * fd_step);
        hi[static_cast<size_t>(j)] = x[static_cast<size_t>(j)];
        lo[static_cast<size_t>(j)] = x[static_cast<size_t>(j)];
    }
    const double lad = logabsdet(jac);
    if (lad < std::log(1e-12)) throw std::runtime_error("numeric_jacobian_logdet: singular Jacobian");
    return lad;
}

double change_of_variables_logprob(const FlowMap& flow, const DVec& x,
                                   const LogPdf& base_logpdf, double fd_step) {
    if (static_cast<int>(x.size()) != flow.dim)
        throw std::invalid_argument("change_of_variables_logprob: dimension mismatch");
    const DVec z = flow.inverse(x);
    return base_logpdf(z) + numeric_jacobian_logdet(flow.inverse, x, fd_step);
}

double first_order_logprob(const DVec& z_0, const DVec& z_hat_0, const DVec& z_T,
                           const PerturbationDelta& delta, const LogPdf& base_logpdf) {
    const size_t d = z_0.size();
    if (z_hat_0.size() != d || z_T.size() != d || delta.delta.size() != d)
        throw std::invalid_argument("first_order_logprob: dimension mismatch");
    const double delta_sq = dotd(delta.delta, delta.delta);
    if (!(delta_sq > 0.0)) throw std::invalid_argument("first_order_logprob: delta must be nonzero");
    double corr = 0.0;
    for (size_t i = 0; i < d; ++i) corr += delta.delta[i] * (z_hat_0[i] - z_0[i]);
    return base_logpdf(z_T) - corr / delta_sq;
}

DerivationReport verify_derivation(int dim, double epsilon_scale, int n_trials, Rng& rng,
                                   int hutchinson_probes) {
    if (dim <= 0 || dim > 8) throw std::invalid_argument("verify_derivation: dim must be in 1..8");
    if (n_trials < 1) throw std::invalid_argument("verify_derivation: need at least one trial");
    if (epsilon_scale < 0.0) throw std::invalid_argument("verify_derivation: negative scale");

    DerivationReport rep;
    rep.dim = dim;
    rep.epsilon_scale = epsilon_scale;
    rep.trials = n_trials;
    rep.hutchinson_probes = hutchinson_probes;
    rep.seed = rng.seed();
    rep.stages = {{"series_truncation", 0, 0},
                  {"hutchinson", 0, 0},
                  {"single_sample_delta", 0, 0},
                  {"taylor", 0, 0}};

    const double eps = epsilon_scale;
    const double sigma_delta = epsilon_scale;  // delta scale tied to the flow scale

    for (int trial = 0; trial < n_trials; ++trial) {
        // f(u) = u + eps * (M u + a .* sin(u)); unit-Frobenius M keeps the
        // perturbation size meaningful across dimensions.
        Eigen::MatrixXd m(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) m(i, j) = rng.normal();
        const double fro = m.norm();
        if (fro > 0) m /= fro;
        DVec a = gaussian_vec(dim, rng, 0.5);
        const DVec y = gaussian_vec(dim, rng);

        auto flow = [&](const DVec& u) {
            DVec out(u.size());
            Eigen::Map<const Eigen::VectorXd> uv(u.data(), dim);
            Eigen::VectorXd lin = m * uv;
            for (int i = 0; i < dim; ++i)
                out[static_cast<size_t>(i)] =
                    u[static_cast<size_t>(i)] +
                    eps * (lin(i) + a[static_cast<size_t>(i)] * std::sin(u[static_cast<size_t>(i)]));
            return out;
        };

        // Analytic Jacobian at y.
        Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(dim, dim) + eps * m;
        for (int i = 0; i < dim; ++i)
            jac(i, i) += eps * a[static_cast<size_t>(i)] * std::cos(y[static_cast<size_t>(i)]);

        const double s_exact = logabsdet(jac);
        const double s_trunc = (jac - Eigen::MatrixXd::Identity(dim, dim)).trace();

        auto apply_jmi = [&](const DVec& v) {
            Eigen::Map<const Eigen::VectorXd> vv(v.data(), dim);
            Eigen::VectorXd out = (jac - Eigen::MatrixXd::Identity(dim, dim)) * vv;
            DVec res(static_cast<size_t>(dim));
            for (int i = 0; i < dim; ++i) res[static_cast<size_t>(i)] = out(i);
            return res;
        };
        const double s_hutch = hutchinson_trace(apply_jmi, dim, hutchinson_probes, rng);

        const DVec delta = gaussian_vec(dim, rng, sigma_delta);
        double s_single = 0.0;
        double s_taylor = 0.0;
        if (sigma_delta > 0.0) {
            s_single = dotd(delta, apply_jmi(delta)) / (sigma_delta * sigma_delta);
            DVec y_pert(y);
            for (int i = 0; i < dim; ++i) y_pert[static_cast<size_t>(i)] += delta[static_cast<size_t>(i)];
            const DVec fy = flow(y);
            const DVec fyp = flow(y_pert);
            DVec displaced(static_cast<size_t>(dim));
            for (int i = 0; i < dim; ++i)
                displaced[static_cast<size_t>(i)] = fyp[static_cast<size_t>(i)] -
                                                    fy[static_cast<size_t>(i)] -
                                                    delta[static_cast<size_t>(i)];
            s_taylor = dotd(delta, displaced) / (sigma_delta * sigma_delta);
        }

        const double errs[4] = {std::fabs(s_trunc - s_exact), std::fabs(s_hutch - s_trunc),
                                std::fabs(s_single - s_hutch), std::fabs(s_taylor - s_single)};
        for (int k = 0; k < 4; ++k) {
            rep.stages[static_cast<size_t>(k)].mean_error += errs[k];
            rep.stages[static_cast<size_t>(k)].max_error =
                std::max(rep.stages[static_cast<size_t>(k)].max_error, errs[k]);
        }
    }
    for (auto& st : rep.stages) st.mean_error /= n_trials;
    return rep;
}

std::string DerivationReport::to_json() const {
    nlohmann::json j;
    j["dim"] = dim;
    j["epsilon_scale"] = epsilon_scale;
    j["trials"] = trials;
    j["hutchinson_probes"] = hutchinson_probes;
    j["seed"] = seed;
    j["stages"] = nlohmann::json::array();
    for (const auto& st : stages) {
        nlohmann::json s;
        s["name"] = st.name;
        s["mean_error"] = st.mean_error;
        s["max_error"] = st.max_error;
        j["stages"].push_back(s);
    }
    return j.dump(2);
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("fit_loglog_slope: need matching series of length >= 2");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0))
            throw std::invalid_argument("fit_loglog_slope: values must be positive");
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace invdet::lab
