#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "voldiff/volume.hpp"

namespace voldiff {

// Per-voxel global coordinates of a patch within its source volume, normalized
// to [-1, 1] with index/(extent-1) so corner voxels hit the endpoints exactly.
struct CoordGrid {
    Shape3 shape;
    std::vector<double> x, y, z;  // each shape.voxels() long
};

// Fourier features of the coordinate channels: for each of x, y, z the pairs
// (sin(2^k pi p), cos(2^k pi p)), k = 0..L-1, giving 6*L channels.
struct PositionEmbedding {
    Shape3 shape;
    int L = 0;
    std::vector<double> channels;  // channel-major, 6*L * shape.voxels()

    int channel_count() const { return 6 * L; }
};

// Coordinates the patch voxels occupy in the original volume. For resized
// inputs the positions interpolate linearly across the record's [lo, hi]
// extent; for direct crops they are the exact global voxel indices.
inline CoordGrid coord_grid_for_window(const Shape3& volume_shape, const CropRecord& record, const Shape3& patch) {
    for (int axis = 0; axis < 3; ++axis) {
        if (record.lo[axis] < 0 || record.hi[axis] < record.lo[axis] || record.hi[axis] >= volume_shape[axis])
            throw std::out_of_range("crop record outside the volume");
    }

    auto axis_coords = [&](int axis) {
        const int64_t n = patch[axis];
        const int64_t extent = volume_shape[axis];
        const double lo = static_cast<double>(record.lo[axis]);
        const double hi = static_cast<double>(record.hi[axis]);
        std::vector<double> c(static_cast<size_t>(n));
        for (int64_t j = 0; j < n; ++j) {
            const double g = (n == 1) ? (lo + hi) / 2.0 : lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(n - 1);
            c[static_cast<size_t>(j)] = (extent == 1) ? 0.0 : 2.0 * g / static_cast<double>(extent - 1) - 1.0;
        }
        return c;
    };

    const auto cz = axis_coords(0), cy = axis_coords(1), cx = axis_coords(2);
    CoordGrid grid;
    grid.shape = patch;
    const size_t n = static_cast<size_t>(patch.voxels());
    grid.x.resize(n);
    grid.y.resize(n);
    grid.z.resize(n);
    size_t i = 0;
    for (int64_t z = 0; z < patch.d; ++z)
        for (int64_t y = 0; y < patch.h; ++y)
            for (int64_t x = 0; x < patch.w; ++x, ++i) {
                grid.z[i] = cz[static_cast<size_t>(z)];
                grid.y[i] = cy[static_cast<size_t>(y)];
                grid.x[i] = cx[static_cast<size_t>(x)];
            }
    return grid;
}

inline PositionEmbedding fourier_encode(const CoordGrid& grid, int L) {
    if (L < 1) throw std::invalid_argument("maximum frequency L must be >= 1");

    PositionEmbedding pe;
    pe.shape = grid.shape;
    pe.L = L;
    const size_t n = grid.x.size();
    pe.channels.resize(static_cast<size_t>(6 * L) * n);

    const std::vector<double>* coords[3] = {&grid.x, &grid.y, &grid.z};
    for (int c = 0; c < 3; ++c) {
        for (int k = 0; k < L; ++k) {
            const double freq = std::ldexp(M_PI, k);  // 2^k * pi
            double* sin_out = &pe.channels[static_cast<size_t>((c * 2 * L) + 2 * k) * n];
            double* cos_out = sin_out + n;
            const double* p = coords[c]->data();
            for (size_t i = 0; i < n; ++i) {
                sin_out[i] = std::sin(freq * p[i]);
                cos_out[i] = std::cos(freq * p[i]);
            }
        }
    }
    return pe;
}

}  // namespace voldiff
