#pragma once

#include <optional>
#include <vector>

#include "voldiff/denoiser.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/rng.hpp"
#include "voldiff/sampler.hpp"
#include "voldiff/tiler.hpp"

namespace voldiff {

// (1 - mask) * known + mask * unknown, elementwise; mask entries must be 0 or 1.
inline Volume repaint_combine(const Volume& x_known, const Volume& x_unknown, const Volume& mask) {
    if (x_known.shape != x_unknown.shape || x_known.shape != mask.shape)
        throw ShapeError("repaint operands disagree on shape");
    Volume out = x_known.like();
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double m = mask.data[i];
        if (m != 0.0 && m != 1.0) throw std::invalid_argument("repaint mask must be binary");
        out.data[i] = (1.0 - m) * x_known.data[i] + m * x_unknown.data[i];
    }
    return out;
}

// Reverse loop where the known region is re-noised from the original image at
// every step and fused with the generated unknown region. The final step takes
// the known branch from the original itself, so voxels outside the mask equal
// x_orig exactly.
inline Volume inpaint_volume(const Denoiser& d, const ConditionBundle& cond, const Volume& x_orig,
                             const Volume& mask, const NoiseSchedule& s, Rng& rng,
                             const std::optional<std::vector<int>>& steps = std::nullopt,
                             const SampleOptions& opts = {}) {
    if (mask.shape != x_orig.shape) throw ShapeError("lesion mask does not match the volume");
    for (double m : mask.data)
        if (m != 0.0 && m != 1.0) throw std::invalid_argument("repaint mask must be binary");

    std::vector<int> list;
    if (steps) {
        validate_step_list(*steps, s.T);
        list = *steps;
    } else {
        list.resize(static_cast<size_t>(s.T));
        for (int i = 0; i < s.T; ++i) list[static_cast<size_t>(i)] = s.T - i;
    }

    Volume x(x_orig.shape);
    x.spacing = x_orig.spacing;
    x.window = x_orig.window;
    x.region = x_orig.region;
    for (auto& v : x.data) v = rng.normal();

    for (size_t i = 0; i < list.size(); ++i) {
        const int t = list[i];
        const int tn = (i + 1 < list.size()) ? list[i + 1] : 0;
        const Volume eps_hat = d.predict_noise(x, t, cond);
        const Volume x_unknown = reverse_transition(x, t, tn, eps_hat, s, rng, opts);
        if (tn == 0) {
            x = repaint_combine(x_orig, x_unknown, mask);
        } else {
            Volume eps(x_orig.shape);
            for (auto& v : eps.data) v = rng.normal();
            const Volume x_known = q_sample(x_orig, tn, eps, s);
            x = repaint_combine(x_known, x_unknown, mask);
        }
    }
    return x;
}

// Volume-scale inpainting: the per-step noise estimate comes from the fused
// sliding windows while the transition and the known/unknown fusion run
// globally. A whole-volume-window plan reproduces inpaint_volume bitwise.
inline Volume inpaint_volume_tiled(const Denoiser& d, const CondFactory& cond_factory, const Volume& x_orig,
                                   const Volume& mask, const NoiseSchedule& s, Rng& rng, const WindowPlan& plan,
                                   const std::optional<std::vector<int>>& steps = std::nullopt, int threads = 1,
                                   const SampleOptions& opts = {}) {
    if (mask.shape != x_orig.shape) throw ShapeError("lesion mask does not match the volume");
    if (plan.volume != x_orig.shape) throw ShapeError("plan does not cover this volume");
    for (double m : mask.data)
        if (m != 0.0 && m != 1.0) throw std::invalid_argument("repaint mask must be binary");

    std::vector<int> list;
    if (steps) {
        validate_step_list(*steps, s.T);
        list = *steps;
    } else {
        list.resize(static_cast<size_t>(s.T));
        for (int i = 0; i < s.T; ++i) list[static_cast<size_t>(i)] = s.T - i;
    }

    Volume x(x_orig.shape);
    x.spacing = x_orig.spacing;
    x.window = x_orig.window;
    x.region = x_orig.region;
    for (auto& v : x.data) v = rng.normal();

    for (size_t i = 0; i < list.size(); ++i) {
        const int t = list[i];
        const int tn = (i + 1 < list.size()) ? list[i + 1] : 0;
        const Volume eps_hat = fused_noise_estimate(d, x, t, plan, cond_factory, threads);
        const Volume x_unknown = reverse_transition(x, t, tn, eps_hat, s, rng, opts);
        if (tn == 0) {
            x = repaint_combine(x_orig, x_unknown, mask);
        } else {
            Volume eps(x_orig.shape);
            for (auto& v : eps.data) v = rng.normal();
            const Volume x_known = q_sample(x_orig, tn, eps, s);
            x = repaint_combine(x_known, x_unknown, mask);
        }
    }
    return x;
}

}  // namespace voldiff
