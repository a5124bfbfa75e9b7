#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace voldiff {

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace detail

// Seeded random stream. Normal variates use an explicit Box-Muller transform so
// that the draw sequence is fixed by this header, not by the standard library's
// unspecified std::normal_distribution algorithm.
class Rng {
public:
    explicit Rng(uint64_t seed) : root_(seed), eng_(seed) {}

    // Independent substream derived from (root seed, tag); the parent's draw
    // position does not affect the child.
    Rng stream(uint64_t tag) const {
        return Rng(detail::splitmix64(root_ ^ detail::splitmix64(tag + 1)));
    }

    uint64_t raw() { return eng_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) { return eng_() % n; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::vector<double> normals(size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = normal();
        return out;
    }

private:
    uint64_t root_;
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace voldiff
