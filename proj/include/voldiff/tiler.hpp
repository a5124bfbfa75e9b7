#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "voldiff/denoiser.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/inverse.hpp"
#include "voldiff/rng.hpp"
#include "voldiff/sampler.hpp"
#include "voldiff/threadpool.hpp"

namespace voldiff {

// Overlapping window placements covering a volume: origins advance by the
// stride with a final flush placement per axis, so every voxel is covered and
// the last window touches the volume end.
struct WindowPlan {
    Shape3 volume;
    Shape3 window;
    Index3 stride;
    std::vector<Index3> origins;
    std::vector<int32_t> coverage;  // per voxel
};

struct WindowPlacement {
    size_t index = 0;
    Index3 origin;
    Shape3 window;
    CropRecord record;
};

using CondFactory = std::function<ConditionBundle(const WindowPlacement&)>;

inline WindowPlan plan_windows(const Shape3& volume, const Shape3& window, const Index3& stride) {
    for (int axis = 0; axis < 3; ++axis) {
        if (window[axis] > volume[axis]) throw std::invalid_argument("window larger than the volume");
        if (stride[axis] < 1 || stride[axis] > window[axis])
            throw std::invalid_argument("stride must be in [1, window]");
    }

    auto axis_origins = [&](int axis) {
        std::vector<int64_t> o;
        const int64_t last = volume[axis] - window[axis];
        for (int64_t p = 0; p < last; p += stride[axis]) o.push_back(p);
        o.push_back(last);  // flush final window (also the only window when last == 0)
        return o;
    };

    WindowPlan plan;
    plan.volume = volume;
    plan.window = window;
    plan.stride = stride;
    const auto oz = axis_origins(0), oy = axis_origins(1), ox = axis_origins(2);
    for (int64_t z : oz)
        for (int64_t y : oy)
            for (int64_t x : ox) plan.origins.push_back({z, y, x});

    plan.coverage.assign(static_cast<size_t>(volume.voxels()), 0);
    for (const Index3& o : plan.origins)
        for (int64_t z = o.z; z < o.z + window.d; ++z)
            for (int64_t y = o.y; y < o.y + window.h; ++y) {
                int32_t* row = &plan.coverage[static_cast<size_t>((z * volume.h + y) * volume.w + o.x)];
                for (int64_t x = 0; x < window.w; ++x) ++row[x];
            }
    return plan;
}

inline WindowPlacement placement_of(const WindowPlan& plan, size_t index) {
    const Index3 o = plan.origins[index];
    CropRecord rec{o,
                   {o.z + plan.window.d - 1, o.y + plan.window.h - 1, o.x + plan.window.w - 1},
                   false,
                   false,
                   2};
    return WindowPlacement{index, o, plan.window, rec};
}

// Mean-fused noise estimate over the plan's windows: each window is predicted
// with its own window-specific conditions, per-voxel sums accumulate in plan
// order (independent of the worker count), and overlaps divide by coverage.
inline Volume fused_noise_estimate(const Denoiser& d, const Volume& x_t, int t, const WindowPlan& plan,
                                   const CondFactory& cond_factory, int threads = 1) {
    if (plan.volume != x_t.shape) throw ShapeError("plan does not cover this volume");

    std::vector<Volume> window_eps(plan.origins.size());
    parallel_for(static_cast<int64_t>(plan.origins.size()), threads, [&](int64_t i) {
        const WindowPlacement pl = placement_of(plan, static_cast<size_t>(i));
        const Volume patch = crop(x_t, pl.origin, pl.window);
        window_eps[static_cast<size_t>(i)] = d.predict_noise(patch, t, cond_factory(pl));
    });

    Volume out = x_t.like();
    for (size_t i = 0; i < plan.origins.size(); ++i) {
        const Index3 o = plan.origins[i];
        const Volume& w = window_eps[i];
        for (int64_t z = 0; z < plan.window.d; ++z)
            for (int64_t y = 0; y < plan.window.h; ++y) {
                const double* src = &w.data[static_cast<size_t>((z * plan.window.h + y) * plan.window.w)];
                double* dst = &out.data[static_cast<size_t>(((o.z + z) * x_t.shape.h + o.y + y) * x_t.shape.w + o.x)];
                for (int64_t x = 0; x < plan.window.w; ++x) dst[x] += src[x];
            }
    }
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= static_cast<double>(plan.coverage[i]);
    return out;
}

// Whole-volume synthesis: one global state, per timestep a fused noise
// estimate followed by a single shared reverse transition. A plan with one
// whole-volume window reproduces sampler::generate bitwise.
inline Volume tiled_generate(const Denoiser& d, const CondFactory& cond_factory, const Shape3& shape,
                             const NoiseSchedule& s, Rng& rng, const WindowPlan& plan,
                             const std::optional<std::vector<int>>& steps = std::nullopt, int threads = 1,
                             const SampleOptions& opts = {}) {
    if (plan.volume != shape) throw ShapeError("plan does not cover this volume");
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
        const Volume eps_hat = fused_noise_estimate(d, x, list[i], plan, cond_factory, threads);
        const int t_to = (i + 1 < list.size()) ? list[i + 1] : 0;
        x = reverse_transition(x, list[i], t_to, eps_hat, s, rng, opts);
    }
    return x;
}

// Volume-scale restoration: the DiffPIR step structure of inverse::restore with
// the denoiser evaluation replaced by the fused sliding-window estimate. The
// proximal data solve and the back-diffusion run globally with one shared
// noise draw per step. A whole-volume-window plan reproduces inverse::restore
// bitwise.
inline Volume tiled_restore(const Denoiser& d, const CondFactory& cond_factory, const Volume& y0,
                            const DegradationOps& ops, const NoiseSchedule& s, const RestoreOptions& opts,
                            Rng& rng, const WindowPlan& plan, int threads = 1) {
    if (opts.nfe < 1) throw std::invalid_argument("nfe must be >= 1");
    if (opts.zeta < 0.0 || opts.zeta > 1.0) throw std::invalid_argument("zeta must be in [0, 1]");

    auto predict = [&](const Volume& x, int t) {
        return fused_noise_estimate(d, x, t, plan, cond_factory, threads);
    };

    if (ops.sf == 1) {
        if (plan.volume != y0.shape) throw ShapeError("plan does not cover this volume");
        auto [x, t_start] = init_from_observation(y0, s, ops.sigma_n);
        std::vector<int> steps =
            opts.steps ? *opts.steps : skip_subsequence(s, std::min(opts.nfe, t_start), t_start);
        auto proximal = [&](const Volume& x0_t, int t) {
            return proximal_denoise(y0, x0_t, rho(s, t, ops.lambda, ops.sigma_n));
        };
        return detail::diffpir_loop(std::move(x), steps, s, opts.zeta, rng, predict, proximal);
    }

    const Shape3 hr{y0.shape.d * ops.sf, y0.shape.h, y0.shape.w};
    if (plan.volume != hr) throw ShapeError("plan does not cover the high-resolution grid");
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

}  // namespace voldiff
