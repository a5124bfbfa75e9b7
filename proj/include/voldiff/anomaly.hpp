#pragma once

#include <cmath>
#include <functional>

#include "voldiff/denoiser.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/rng.hpp"
#include "voldiff/sampler.hpp"
#include "voldiff/tiler.hpp"

namespace voldiff {

// Reconstruction-based detection output. The signed map keeps the direction of
// the deviation; binarization and scoring use the absolute map so hypo- and
// hyper-intense lesions both register.
struct AnomalyResult {
    Volume map;      // masked input minus one-shot reconstruction
    Volume abs_map;  // |map|
    Volume mask;     // binary, restricted to the ROI
    double score = 0.0;
};

enum class AnomalyScore { Max, Mean };

// mask = (abs_map >= threshold) AND roi
inline Volume binarize(const Volume& abs_map, const Volume& roi, double threshold) {
    if (abs_map.shape != roi.shape) throw ShapeError("ROI does not match the anomaly map");
    if (!(threshold >= 0.0)) throw std::invalid_argument("threshold must be >= 0");
    Volume mask = abs_map.like();
    for (size_t i = 0; i < mask.data.size(); ++i)
        mask.data[i] = (roi.data[i] != 0.0 && abs_map.data[i] >= threshold) ? 1.0 : 0.0;
    return mask;
}

using NoisePredictor = std::function<Volume(const Volume& x_t, int t)>;

namespace detail {

inline AnomalyResult detect_impl(const Volume& x, const Volume& roi, int t_fixed, double threshold,
                                 const NoiseSchedule& s, Rng& rng, const NoisePredictor& predictor,
                                 AnomalyScore score_kind) {
    if (roi.shape != x.shape) throw ShapeError("ROI does not match the volume");
    if (t_fixed < 1 || t_fixed > s.T) throw std::invalid_argument("t_fixed out of range");
    bool any = false;
    for (double v : roi.data)
        if (v != 0.0) {
            any = true;
            break;
        }
    if (!any) throw std::invalid_argument("empty ROI");

    // mask out everything outside the ROI at the background value -1
    Volume masked = x;
    for (size_t i = 0; i < masked.data.size(); ++i)
        if (roi.data[i] == 0.0) masked.data[i] = -1.0;

    Volume eps(x.shape);
    for (auto& v : eps.data) v = rng.normal();
    const Volume x_t = q_sample(masked, t_fixed, eps, s);
    const Volume eps_hat = predictor(x_t, t_fixed);
    const Volume recon = predict_x0(x_t, t_fixed, eps_hat, s);

    AnomalyResult r;
    r.map = masked.like();
    r.abs_map = masked.like();
    for (size_t i = 0; i < masked.data.size(); ++i) {
        r.map.data[i] = masked.data[i] - recon.data[i];
        r.abs_map.data[i] = std::abs(r.map.data[i]);
    }
    r.mask = binarize(r.abs_map, roi, threshold);

    double acc = 0.0;
    int64_t count = 0;
    for (size_t i = 0; i < r.abs_map.data.size(); ++i) {
        if (roi.data[i] == 0.0) continue;
        if (score_kind == AnomalyScore::Max)
            acc = std::max(acc, r.abs_map.data[i]);
        else
            acc += r.abs_map.data[i];
        ++count;
    }
    r.score = score_kind == AnomalyScore::Max ? acc : acc / static_cast<double>(count);
    return r;
}

}  // namespace detail

// Masked fixed-step noising followed by a one-shot x0 prediction; the anomaly
// map is the difference between the masked input and its reconstruction.
inline AnomalyResult detect(const Denoiser& d, const Volume& x, const Volume& roi, const ConditionBundle& cond,
                            int t_fixed, double threshold, const NoiseSchedule& s, Rng& rng,
                            AnomalyScore score_kind = AnomalyScore::Max) {
    return detail::detect_impl(
        x, roi, t_fixed, threshold, s, rng,
        [&](const Volume& x_t, int t) { return d.predict_noise(x_t, t, cond); }, score_kind);
}

// Volume-scale variant: the noise estimate comes from the sliding-window fusion.
inline AnomalyResult detect_tiled(const Denoiser& d, const Volume& x, const Volume& roi,
                                  const CondFactory& cond_factory, int t_fixed, double threshold,
                                  const NoiseSchedule& s, Rng& rng, const WindowPlan& plan, int threads = 1,
                                  AnomalyScore score_kind = AnomalyScore::Max) {
    return detail::detect_impl(
        x, roi, t_fixed, threshold, s, rng,
        [&](const Volume& x_t, int t) { return fused_noise_estimate(d, x_t, t, plan, cond_factory, threads); },
        score_kind);
}

// Default fixed noising step: the reference 950-of-1000 scaled to the schedule.
inline int default_anomaly_t(const NoiseSchedule& s) {
    return std::max(1, static_cast<int>(std::lround(0.95 * static_cast<double>(s.T))));
}

}  // namespace voldiff
