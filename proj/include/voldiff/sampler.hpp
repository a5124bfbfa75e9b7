#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "voldiff/denoiser.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/rng.hpp"
#include "voldiff/schedule.hpp"
#include "voldiff/volume.hpp"

namespace voldiff {

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
inline Volume q_sample(const Volume& x0, int t, const Volume& eps, const NoiseSchedule& s) {
    if (t < 0 || t > s.T) throw std::invalid_argument("timestep out of range");
    if (eps.shape != x0.shape) throw ShapeError("noise shape mismatch in q_sample");
    const double ab = s.alpha_bar[static_cast<size_t>(t)];
    const double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
    Volume out = x0.like();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ca * x0.data[i] + cb * eps.data[i];
    return out;
}

// x0 = (x_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
inline Volume predict_x0(const Volume& x_t, int t, const Volume& eps_hat, const NoiseSchedule& s) {
    if (t < 1 || t > s.T) throw std::invalid_argument("timestep out of range");
    if (eps_hat.shape != x_t.shape) throw ShapeError("noise shape mismatch in predict_x0");
    const double ab = s.alpha_bar[static_cast<size_t>(t)];
    if (!(ab > 0.0)) throw std::domain_error("degenerate step: alpha_bar is zero");
    const double inv = 1.0 / std::sqrt(ab), cb = std::sqrt(1.0 - ab);
    Volume out = x_t.like();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = (x_t.data[i] - cb * eps_hat.data[i]) * inv;
    return out;
}

// One reverse step: mu = (x_t - beta_t/sqrt(1-abar_t) * eps_hat)/sqrt(alpha_t),
// plus sqrt(btilde_t) * z with btilde_t = (1-abar_{t-1})/(1-abar_t) * beta_t.
// At t = 1 the output is mu with no noise.
inline Volume ancestral_step(const Volume& x_t, int t, const Volume& eps_hat, const NoiseSchedule& s, Rng& rng) {
    if (t < 1 || t > s.T) throw std::invalid_argument("timestep out of range");
    if (eps_hat.shape != x_t.shape) throw ShapeError("noise shape mismatch in ancestral_step");
    const double ab = s.alpha_bar[static_cast<size_t>(t)];
    const double ab_prev = s.alpha_bar[static_cast<size_t>(t) - 1];
    const double beta = s.beta[static_cast<size_t>(t)];
    const double ce = beta / std::sqrt(1.0 - ab);
    const double inv = 1.0 / std::sqrt(s.alpha[static_cast<size_t>(t)]);

    Volume out = x_t.like();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = (x_t.data[i] - ce * eps_hat.data[i]) * inv;
    if (t > 1) {
        const double btilde = (1.0 - ab_prev) / (1.0 - ab) * beta;
        const double sd = std::sqrt(btilde);
        for (auto& v : out.data) v += sd * rng.normal();
    }
    return out;
}

// Optional clamp on the x0 estimate inside reverse transitions. Trained
// denoisers are imperfect at large t where predict_x0 amplifies their error by
// 1/sqrt(alpha_bar); clamping to the data range keeps the chain on the data
// manifold. Disabled (the exact formulas) by default so the analytic-oracle
// contracts are untouched.
struct SampleOptions {
    std::optional<std::pair<double, double>> clip_x0;

    static SampleOptions clipped(double lo = -1.0, double hi = 1.0) {
        SampleOptions o;
        o.clip_x0 = {lo, hi};
        return o;
    }
};

// Transition from t_from to t_to < t_from. Adjacent steps take the ancestral
// form; skips re-derive coefficients from alpha_bar at the two endpoints
// (eta = 1 ancestral noise). t_to = 0 lands deterministically on the x0
// estimate. Both tiled and non-tiled samplers route through here so that
// whole-volume-window plans reproduce the non-tiled path bitwise.
inline Volume reverse_transition(const Volume& x_t, int t_from, int t_to, const Volume& eps_hat,
                                 const NoiseSchedule& s, Rng& rng, const SampleOptions& opts = {}) {
    if (t_to < 0 || t_to >= t_from) throw std::invalid_argument("transition needs 0 <= t_to < t_from");
    if (!opts.clip_x0 && t_to == t_from - 1) return ancestral_step(x_t, t_from, eps_hat, s, rng);

    const double ab_from = s.alpha_bar[static_cast<size_t>(t_from)];
    const double ab_to = s.alpha_bar[static_cast<size_t>(t_to)];
    const double inv = 1.0 / std::sqrt(ab_from), cb = std::sqrt(1.0 - ab_from);

    if (opts.clip_x0) {
        const auto [lo, hi] = *opts.clip_x0;
        Volume out = x_t.like();
        if (t_to == t_from - 1) {
            // ancestral posterior mean written in x0 form so the clamp applies
            const double beta = s.beta[static_cast<size_t>(t_from)];
            const double c0 = beta * std::sqrt(ab_to) / (1.0 - ab_from);
            const double cx = (1.0 - ab_to) * std::sqrt(s.alpha[static_cast<size_t>(t_from)]) / (1.0 - ab_from);
            for (size_t i = 0; i < out.data.size(); ++i) {
                const double x0 = std::clamp((x_t.data[i] - cb * eps_hat.data[i]) * inv, lo, hi);
                out.data[i] = c0 * x0 + cx * x_t.data[i];
            }
            if (t_to > 0) {
                const double sd = std::sqrt((1.0 - ab_to) / (1.0 - ab_from) * beta);
                for (auto& v : out.data) v += sd * rng.normal();
            }
            return out;
        }
        const double var = (1.0 - ab_to) / (1.0 - ab_from) * (1.0 - ab_from / ab_to);
        const double c0 = std::sqrt(ab_to);
        const double ce = std::sqrt(std::max(0.0, 1.0 - ab_to - var));
        const double sd = std::sqrt(std::max(0.0, var));
        for (size_t i = 0; i < out.data.size(); ++i) {
            const double x0 = std::clamp((x_t.data[i] - cb * eps_hat.data[i]) * inv, lo, hi);
            const double eps_eff = (x_t.data[i] - std::sqrt(ab_from) * x0) * (1.0 / cb);
            out.data[i] = c0 * x0 + ce * eps_eff;
        }
        if (t_to > 0 && sd > 0.0)
            for (auto& v : out.data) v += sd * rng.normal();
        return out;
    }

    const double var = (1.0 - ab_to) / (1.0 - ab_from) * (1.0 - ab_from / ab_to);
    const double c0 = std::sqrt(ab_to);
    const double ce = std::sqrt(std::max(0.0, 1.0 - ab_to - var));
    const double sd = std::sqrt(std::max(0.0, var));
    Volume out = x_t.like();
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double x0 = (x_t.data[i] - cb * eps_hat.data[i]) * inv;
        out.data[i] = c0 * x0 + ce * eps_hat.data[i];
    }
    if (t_to > 0 && sd > 0.0)
        for (auto& v : out.data) v += sd * rng.normal();
    return out;
}

inline void validate_step_list(const std::vector<int>& steps, int T) {
    if (steps.empty()) throw std::invalid_argument("step list is empty");
    if (steps.back() != 1) throw std::invalid_argument("step list must end at 1");
    int prev = T + 1;
    for (int t : steps) {
        if (t < 1 || t > T || t >= prev) throw std::invalid_argument("step list must be strictly decreasing in [1, T]");
        prev = t;
    }
}

// Full reverse sampling: start from standard normal x at steps.front() and walk
// the list down to the final deterministic step onto x0.
inline Volume generate(const Denoiser& d, const ConditionBundle& cond, const Shape3& shape, const NoiseSchedule& s,
                       Rng& rng, const std::optional<std::vector<int>>& steps = std::nullopt,
                       const SampleOptions& opts = {}) {
    std::vector<int> list;
    if (steps) {
        validate_step_list(*steps, s.T);
        list = *steps;
    } else {
        list.resize(static_cast<size_t>(s.T));
        for (int i = 0; i < s.T; ++i) list[static_cast<size_t>(i)] = s.T - i;
    }

    Volume x(shape);
    for (auto& v : x.data) v = rng.normal();
    for (size_t i = 0; i < list.size(); ++i) {
        const Volume eps_hat = d.predict_noise(x, list[i], cond);
        const int t_to = (i + 1 < list.size()) ? list[i + 1] : 0;
        x = reverse_transition(x, list[i], t_to, eps_hat, s, rng, opts);
    }
    return x;
}

}  // namespace voldiff
