#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "voldiff/denoiser.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/rng.hpp"
#include "voldiff/sampler.hpp"
#include "voldiff/schedule.hpp"
#include "voldiff/volume.hpp"

namespace voldiff {

// Degradation pair for the restoration tasks. sf == 1 is plain denoising
// (H = identity); sf > 1 averages sf consecutive z slices (thick-slice
// forward) while H_up replicates each slice sf times, so H(H_up(y)) = y
// exactly and <H(x), y> = (1/sf) <x, H_up(y)>.
struct DegradationOps {
    int sf = 1;
    double sigma_n = 0.15;
    double lambda = 10.0;

    Volume apply_h(const Volume& v) const {
        if (sf == 1) return v;
        if (v.shape.d % sf != 0) throw ShapeError("depth not divisible by the scale factor");
        Volume out({v.shape.d / sf, v.shape.h, v.shape.w});
        out.spacing = {v.spacing.z * sf, v.spacing.y, v.spacing.x};
        out.window = v.window;
        out.region = v.region;
        const int64_t plane = v.shape.h * v.shape.w;
        const double inv = 1.0 / static_cast<double>(sf);
        // mean computed as first + mean(x - first): a replicated slab sums to an
        // exact zero correction, making H an exact left inverse of H_up
        for (int64_t z = 0; z < out.shape.d; ++z)
            for (int64_t i = 0; i < plane; ++i) {
                const double first = v.data[static_cast<size_t>(z * sf * plane + i)];
                double s = 0.0;
                for (int k = 1; k < sf; ++k)
                    s += v.data[static_cast<size_t>((z * sf + k) * plane + i)] - first;
                out.data[static_cast<size_t>(z * plane + i)] = first + s * inv;
            }
        return out;
    }

    Volume apply_h_up(const Volume& v) const {
        if (sf == 1) return v;
        Volume out({v.shape.d * sf, v.shape.h, v.shape.w});
        out.spacing = {v.spacing.z / sf, v.spacing.y, v.spacing.x};
        out.window = v.window;
        out.region = v.region;
        const int64_t plane = v.shape.h * v.shape.w;
        for (int64_t z = 0; z < out.shape.d; ++z) {
            const double* src = &v.data[static_cast<size_t>((z / sf) * plane)];
            std::copy(src, src + plane, &out.data[static_cast<size_t>(z * plane)]);
        }
        return out;
    }
};

// Trade-off coefficient of the data proximal subproblem: rho_t = lambda * sigma_n^2 / sigma_bar_t^2.
inline double rho(const NoiseSchedule& s, int t, double lambda, double sigma_n) {
    if (!(lambda > 0.0) || !(sigma_n > 0.0)) throw std::invalid_argument("lambda and sigma_n must be positive");
    if (t < 1 || t > s.T) throw std::invalid_argument("timestep out of range");
    const double sb = s.sigma_bar[static_cast<size_t>(t)];
    return lambda * sigma_n * sigma_n / (sb * sb);
}

// Closed-form data solve for denoising: (y0 + rho * x0) / (1 + rho).
inline Volume proximal_denoise(const Volume& y0, const Volume& x0_t, double rho_t) {
    if (y0.shape != x0_t.shape) throw ShapeError("observation and estimate shapes differ");
    Volume out = x0_t.like();
    const double inv = 1.0 / (1.0 + rho_t);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = (y0.data[i] + rho_t * x0_t.data[i]) * inv;
    return out;
}

// Closed-form data solve for z-axis super-resolution:
// x0 + H_up(y0 - H(x0)) / (1 + rho).
inline Volume proximal_sr(const Volume& y0, const Volume& x0_t, double rho_t, const DegradationOps& ops) {
    const Volume hx = ops.apply_h(x0_t);
    if (hx.shape != y0.shape) throw ShapeError("H(x0) does not match the observation shape");
    Volume resid = y0;
    for (size_t i = 0; i < resid.data.size(); ++i) resid.data[i] -= hx.data[i];
    const Volume up = ops.apply_h_up(resid);
    Volume out = x0_t;
    const double inv = 1.0 / (1.0 + rho_t);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += up.data[i] * inv;
    return out;
}

// Observation-matched start: t_start with sigma_bar >= sigma_n and
// x_start = sqrt(abar_{t_start}) * y0.
inline std::pair<Volume, int> init_from_observation(const Volume& y0, const NoiseSchedule& s, double sigma_n) {
    const int t_start = t_start_for_sigma(s, sigma_n);
    Volume x = y0;
    const double c = std::sqrt(s.alpha_bar[static_cast<size_t>(t_start)]);
    for (auto& v : x.data) v *= c;
    return {std::move(x), t_start};
}

struct RestoreOptions {
    int nfe = 50;
    double zeta = 0.3;   // back-diffusion noise mixing; 0 = deterministic re-noising
    std::optional<std::vector<int>> steps;  // overrides nfe/t_start when set
};

namespace detail {

// Shared DiffPIR step structure. predict: fused or direct noise estimate at t;
// proximal: task-specific data solve on the x0 estimate.
template <class PredictFn, class ProximalFn>
Volume diffpir_loop(Volume x, const std::vector<int>& steps, const NoiseSchedule& s, double zeta, Rng& rng,
                    PredictFn&& predict, ProximalFn&& proximal) {
    for (size_t i = 0; i < steps.size(); ++i) {
        const int t = steps[i];
        const Volume eps_hat = predict(x, t);
        const Volume x0_t = predict_x0(x, t, eps_hat, s);
        Volume xhat0 = proximal(x0_t, t);
        if (i + 1 == steps.size()) return xhat0;

        const int tn = steps[i + 1];
        const double ab = s.alpha_bar[static_cast<size_t>(t)];
        const double abn = s.alpha_bar[static_cast<size_t>(tn)];
        const double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
        const double can = std::sqrt(abn), cbn = std::sqrt(1.0 - abn);
        const double cd = std::sqrt(1.0 - zeta), cz = std::sqrt(zeta);
        for (size_t k = 0; k < x.data.size(); ++k) {
            const double eps_eff = (x.data[k] - ca * xhat0.data[k]) / cb;
            double mix = cd * eps_eff;
            if (zeta > 0.0) mix += cz * rng.normal();
            x.data[k] = can * xhat0.data[k] + cbn * mix;
        }
    }
    return x;  // unreachable for non-empty step lists
}

}  // namespace detail

// Plug-and-play restoration. sf == 1: denoising, initialized from the
// observation at the matched intermediate step. sf > 1: z-axis
// super-resolution, initialized with noise at T on the high-resolution grid.
// Returns the x0 estimate of the final step.
inline Volume restore(const Denoiser& d, const ConditionBundle& cond, const Volume& y0, const DegradationOps& ops,
                      const NoiseSchedule& s, const RestoreOptions& opts, Rng& rng) {
    if (opts.nfe < 1) throw std::invalid_argument("nfe must be >= 1");
    if (opts.zeta < 0.0 || opts.zeta > 1.0) throw std::invalid_argument("zeta must be in [0, 1]");

    auto predict = [&](const Volume& x, int t) { return d.predict_noise(x, t, cond); };

    if (ops.sf == 1) {
        auto [x, t_start] = init_from_observation(y0, s, ops.sigma_n);
        std::vector<int> steps =
            opts.steps ? *opts.steps : skip_subsequence(s, std::min(opts.nfe, t_start), t_start);
        auto proximal = [&](const Volume& x0_t, int t) {
            return proximal_denoise(y0, x0_t, rho(s, t, ops.lambda, ops.sigma_n));
        };
        return detail::diffpir_loop(std::move(x), steps, s, opts.zeta, rng, predict, proximal);
    }

    const Shape3 hr{y0.shape.d * ops.sf, y0.shape.h, y0.shape.w};
    Volume x(hr);
    x.spacing = {y0.spacing.z / ops.sf, y0.spacing.y, y0.spacing.x};
    x.window = y0.window;
    x.region = y0.region;
    for (auto& v : x.data) v = rng.normal();
    std::vector<int> steps = opts.steps ? *opts.steps : skip_subsequence(s, std::min(opts.nfe, s.T), s.T);
    auto proximal = [&](const Volume& x0_t, int t) {
        return proximal_sr(y0, x0_t, rho(s, t, ops.lambda, ops.sigma_n), ops);
    };
    return detail::diffpir_loop(std::move(x), steps, s, opts.zeta, rng, predict, proximal);
}

// Heuristic observation-noise estimator: second differences along each axis
// respond to noise with variance 6 sigma^2 but stay near zero on smooth
// structure; a median of absolute responses makes the fit robust to edges.
inline double estimate_noise_sigma(const Volume& v) {
    std::vector<double> responses;
    responses.reserve(static_cast<size_t>(v.voxels()));
    const auto collect = [&](int axis) {
        const int64_t D = v.shape.d, H = v.shape.h, W = v.shape.w;
        for (int64_t z = (axis == 0); z < D - (axis == 0); ++z)
            for (int64_t y = (axis == 1); y < H - (axis == 1); ++y)
                for (int64_t x = (axis == 2); x < W - (axis == 2); ++x) {
                    const int64_t dz = axis == 0, dy = axis == 1, dx = axis == 2;
                    responses.push_back(v.at(z - dz, y - dy, x - dx) - 2.0 * v.at(z, y, x) +
                                        v.at(z + dz, y + dy, x + dx));
                }
    };
    for (int axis = 0; axis < 3; ++axis)
        if (v.shape[axis] >= 3) collect(axis);
    if (responses.empty()) return 0.0;
    std::nth_element(responses.begin(), responses.begin() + static_cast<int64_t>(responses.size() / 2),
                     responses.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    const double mad = std::abs(responses[responses.size() / 2]);
    return mad / (0.6745 * std::sqrt(6.0));
}

}  // namespace voldiff
