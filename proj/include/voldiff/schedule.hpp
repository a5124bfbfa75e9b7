#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace voldiff {

// Precomputed diffusion tables, 1-based in t with the alpha_bar[0] = 1
// convention. sigma_bar[t] = sqrt((1 - alpha_bar[t]) / alpha_bar[t]) is the
// noise-to-signal std used to match observation noise levels to timesteps.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[1..T]; beta[0] = 0
    std::vector<double> alpha;      // alpha[t] = 1 - beta[t]; alpha[0] = 1
    std::vector<double> alpha_bar;  // alpha_bar[0] = 1, strictly decreasing
    std::vector<double> sigma_bar;  // sigma_bar[0] = 0, strictly increasing
};

// alpha_bar[t] = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), s = 0.008;
// beta[t] = 1 - alpha_bar[t]/alpha_bar[t-1] clipped to [1e-8, 0.999], then the
// tables are rebuilt from the clipped betas so every identity holds exactly.
inline NoiseSchedule cosine_schedule(int T) {
    if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
    constexpr double s = 0.008;
    auto f = [&](double t) {
        const double a = ((t / static_cast<double>(T) + s) / (1.0 + s)) * M_PI / 2.0;
        const double c = std::cos(a);
        return c * c;
    };

    NoiseSchedule sch;
    sch.T = T;
    sch.beta.assign(static_cast<size_t>(T) + 1, 0.0);
    sch.alpha.assign(static_cast<size_t>(T) + 1, 1.0);
    sch.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
    sch.sigma_bar.assign(static_cast<size_t>(T) + 1, 0.0);

    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double ab = f(static_cast<double>(t)) / f0;
        const double beta = std::clamp(1.0 - ab / prev, 1e-8, 0.999);
        prev = ab;
        sch.beta[t] = beta;
        sch.alpha[t] = 1.0 - beta;
        sch.alpha_bar[t] = sch.alpha_bar[t - 1] * sch.alpha[t];
        sch.sigma_bar[t] = std::sqrt((1.0 - sch.alpha_bar[t]) / sch.alpha_bar[t]);
    }
    return sch;
}

// Smallest t with sigma_bar[t] >= sigma_n, clamped to T.
inline int t_start_for_sigma(const NoiseSchedule& s, double sigma_n) {
    if (!(sigma_n > 0.0)) throw std::invalid_argument("sigma_n must be positive");
    const auto it = std::lower_bound(s.sigma_bar.begin() + 1, s.sigma_bar.end(), sigma_n);
    if (it == s.sigma_bar.end()) return s.T;
    return static_cast<int>(it - s.sigma_bar.begin());
}

// Strictly decreasing list of nfe timesteps from t_start to 1, uniformly
// spaced; nfe == 1 yields just {t_start}.
inline std::vector<int> skip_subsequence(const NoiseSchedule& s, int nfe, int t_start) {
    if (t_start < 1 || t_start > s.T) throw std::invalid_argument("t_start out of range");
    if (nfe < 1 || nfe > t_start) throw std::invalid_argument("nfe must be in [1, t_start]");
    if (nfe == 1) return {t_start};

    std::vector<int> steps(static_cast<size_t>(nfe));
    for (int i = 0; i < nfe; ++i) {
        const double pos = t_start + (1.0 - t_start) * static_cast<double>(i) / (nfe - 1);
        int t = static_cast<int>(std::lround(pos));
        if (i > 0 && t >= steps[static_cast<size_t>(i) - 1]) t = steps[static_cast<size_t>(i) - 1] - 1;
        steps[static_cast<size_t>(i)] = t;
    }
    return steps;
}

}  // namespace voldiff
