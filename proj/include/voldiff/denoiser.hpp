#pragma once

#include <cmath>
#include <memory>

#include "voldiff/condition.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/schedule.hpp"
#include "voldiff/volume.hpp"

namespace voldiff {

// Noise-prediction contract: maps (noisy patch, timestep, conditions) to a
// predicted-noise patch of identical shape. Implementations must be
// deterministic given identical inputs and parameters, and are read-only at
// inference so calls may run concurrently.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Volume predict_noise(const Volume& x_t, int t, const ConditionBundle& cond) const = 0;
};

// Closed-form posterior-mean noise predictor for the elementwise-Gaussian data
// model x0 ~ N(mu0, var0 I). Serves as the verification oracle for the
// samplers: E[eps | x_t] = sqrt(1-abar)*(x_t - sqrt(abar)*mu0) / (abar*var0 + 1 - abar).
class AnalyticGaussianDenoiser : public Denoiser {
public:
    AnalyticGaussianDenoiser(double mu0, double var0, NoiseSchedule schedule)
        : mu0_(mu0), var0_(var0), schedule_(std::move(schedule)) {
        if (!(var0 > 0.0)) throw std::invalid_argument("var0 must be positive");
    }

    Volume predict_noise(const Volume& x_t, int t, const ConditionBundle&) const override {
        if (t < 1 || t > schedule_.T) throw std::invalid_argument("timestep out of range");
        const double ab = schedule_.alpha_bar[static_cast<size_t>(t)];
        const double num = std::sqrt(1.0 - ab);
        const double den = ab * var0_ + 1.0 - ab;
        const double shift = std::sqrt(ab) * mu0_;
        Volume out = x_t.like();
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = num * (x_t.data[i] - shift) / den;
        return out;
    }

    double mu0() const { return mu0_; }
    double var0() const { return var0_; }

private:
    double mu0_;
    double var0_;
    NoiseSchedule schedule_;
};

}  // namespace voldiff
