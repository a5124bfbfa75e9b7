#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "voldiff/errors.hpp"
#include "voldiff/rng.hpp"

namespace voldiff {

struct Shape3 {
    int64_t d = 0, h = 0, w = 0;

    int64_t voxels() const { return d * h * w; }
    int64_t operator[](int axis) const { return axis == 0 ? d : axis == 1 ? h : w; }
    bool operator==(const Shape3&) const = default;
};

struct Index3 {
    int64_t z = 0, y = 0, x = 0;

    int64_t operator[](int axis) const { return axis == 0 ? z : axis == 1 ? y : x; }
    bool operator==(const Index3&) const = default;
};

struct Spacing3 {
    double z = 1.0, y = 1.0, x = 1.0;
    bool operator==(const Spacing3&) const = default;
};

// CT display window: center (level) and width in HU.
struct WindowSpec {
    double level = 50.0;
    double width = 400.0;
    bool operator==(const WindowSpec&) const = default;
};

enum class RegionClass { HaN = 0, Chest = 1, Abdomen = 2 };

inline const char* region_name(RegionClass r) {
    switch (r) {
        case RegionClass::HaN: return "HaN";
        case RegionClass::Chest: return "Chest";
        default: return "Abdomen";
    }
}

inline RegionClass region_from_name(const std::string& s) {
    if (s == "HaN") return RegionClass::HaN;
    if (s == "Chest") return RegionClass::Chest;
    if (s == "Abdomen") return RegionClass::Abdomen;
    throw std::invalid_argument("unknown region class: " + s);
}

// Per-region window presets (level/width in HU).
inline WindowSpec region_window(RegionClass r) {
    switch (r) {
        case RegionClass::HaN: return {50.0, 400.0};
        case RegionClass::Chest: return {-500.0, 1800.0};
        default: return {60.0, 360.0};
    }
}

// Dense 3D scalar grid, x-fastest row-major. Treated as immutable after
// construction; shared freely across concurrent tasks.
struct Volume {
    Shape3 shape;
    Spacing3 spacing;
    WindowSpec window;
    RegionClass region = RegionClass::HaN;
    std::vector<double> data;

    Volume() = default;
    Volume(Shape3 s, double fill = 0.0)
        : shape(s), data(static_cast<size_t>(s.voxels()), fill) {
        if (s.d < 1 || s.h < 1 || s.w < 1)
            throw std::invalid_argument("volume dimensions must be positive");
    }

    int64_t voxels() const { return shape.voxels(); }

    double& at(int64_t z, int64_t y, int64_t x) {
        return data[static_cast<size_t>((z * shape.h + y) * shape.w + x)];
    }
    double at(int64_t z, int64_t y, int64_t x) const {
        return data[static_cast<size_t>((z * shape.h + y) * shape.w + x)];
    }

    Volume like(double fill = 0.0) const {
        Volume v(shape, fill);
        v.spacing = spacing;
        v.window = window;
        v.region = region;
        return v;
    }
};

// Crop/resize provenance of a patch inside its source volume: inclusive voxel
// extent [lo, hi] per axis, whether the patch was resized from that extent, and
// whether a crop branch fell back to whole-image resizing.
struct CropRecord {
    Index3 lo;
    Index3 hi;
    bool resized = false;
    bool fallback = false;
    int branch = 0;  // 0: whole-image resize, 1: crop 2x then resize, 2: direct crop
};

inline CropRecord whole_volume_record(const Shape3& shape) {
    return CropRecord{{0, 0, 0}, {shape.d - 1, shape.h - 1, shape.w - 1}, true, false, 0};
}

// clamp((hu - (level - width/2)) / width, 0, 1) * 2 - 1
inline Volume hu_normalize(const Volume& v, const WindowSpec& w) {
    if (!(w.width > 0.0)) throw std::invalid_argument("window width must be positive");
    Volume out = v;
    out.window = w;
    const double lo = w.level - w.width / 2.0;
    for (auto& x : out.data) x = std::clamp((x - lo) / w.width, 0.0, 1.0) * 2.0 - 1.0;
    return out;
}

// Inverse of hu_normalize on the non-clamped range.
inline Volume hu_denormalize(const Volume& v, const WindowSpec& w) {
    if (!(w.width > 0.0)) throw std::invalid_argument("window width must be positive");
    Volume out = v;
    const double lo = w.level - w.width / 2.0;
    for (auto& x : out.data) x = (x + 1.0) / 2.0 * w.width + lo;
    return out;
}

// Trilinear resize with half-voxel-aligned corners; border samples clamp.
inline Volume resize_trilinear(const Volume& v, const Shape3& target) {
    if (target.d < 1 || target.h < 1 || target.w < 1)
        throw std::invalid_argument("resize target dimensions must be >= 1");
    if (target == v.shape) return v;

    Volume out(target);
    out.spacing = {v.spacing.z * static_cast<double>(v.shape.d) / static_cast<double>(target.d),
                   v.spacing.y * static_cast<double>(v.shape.h) / static_cast<double>(target.h),
                   v.spacing.x * static_cast<double>(v.shape.w) / static_cast<double>(target.w)};
    out.window = v.window;
    out.region = v.region;

    auto src_coord = [](int64_t i, int64_t n_out, int64_t n_in) {
        return (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
    };
    auto split = [](double c, int64_t n, int64_t& i0, int64_t& i1, double& f) {
        const double cc = std::clamp(c, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<int64_t>(std::floor(cc));
        i1 = std::min(i0 + 1, n - 1);
        f = cc - static_cast<double>(i0);
    };

    for (int64_t z = 0; z < target.d; ++z) {
        int64_t z0, z1;
        double fz;
        split(src_coord(z, target.d, v.shape.d), v.shape.d, z0, z1, fz);
        for (int64_t y = 0; y < target.h; ++y) {
            int64_t y0, y1;
            double fy;
            split(src_coord(y, target.h, v.shape.h), v.shape.h, y0, y1, fy);
            for (int64_t x = 0; x < target.w; ++x) {
                int64_t x0, x1;
                double fx;
                split(src_coord(x, target.w, v.shape.w), v.shape.w, x0, x1, fx);
                const double c00 = v.at(z0, y0, x0) * (1 - fx) + v.at(z0, y0, x1) * fx;
                const double c01 = v.at(z0, y1, x0) * (1 - fx) + v.at(z0, y1, x1) * fx;
                const double c10 = v.at(z1, y0, x0) * (1 - fx) + v.at(z1, y0, x1) * fx;
                const double c11 = v.at(z1, y1, x0) * (1 - fx) + v.at(z1, y1, x1) * fx;
                out.at(z, y, x) = (c00 * (1 - fy) + c01 * fy) * (1 - fz) + (c10 * (1 - fy) + c11 * fy) * fz;
            }
        }
    }
    return out;
}

inline Volume crop(const Volume& v, const Index3& origin, const Shape3& size) {
    if (size.d < 1 || size.h < 1 || size.w < 1)
        throw std::invalid_argument("crop size dimensions must be >= 1");
    if (origin.z < 0 || origin.y < 0 || origin.x < 0 || origin.z + size.d > v.shape.d ||
        origin.y + size.h > v.shape.h || origin.x + size.w > v.shape.w)
        throw std::out_of_range("crop extends outside the volume");

    Volume out(size);
    out.spacing = v.spacing;
    out.window = v.window;
    out.region = v.region;
    for (int64_t z = 0; z < size.d; ++z)
        for (int64_t y = 0; y < size.h; ++y) {
            const double* src = &v.data[static_cast<size_t>(((origin.z + z) * v.shape.h + origin.y + y) * v.shape.w + origin.x)];
            double* dst = &out.data[static_cast<size_t>((z * size.h + y) * size.w)];
            std::copy(src, src + size.w, dst);
        }
    return out;
}

// Multi-level input sampling: with equal probability (a) resize the whole
// volume to the patch size, (b) crop twice the patch size then resize, or
// (c) crop the patch size directly. Branches (b)/(c) fall back to (a), with the
// record flagged, when the volume is too small for the crop.
inline std::pair<Volume, CropRecord> multi_level_sample(const Volume& v, const Shape3& patch, Rng& rng) {
    if (patch.d < 1 || patch.h < 1 || patch.w < 1)
        throw std::invalid_argument("patch dimensions must be >= 1");

    const int branch = static_cast<int>(rng.uniform_int(3));
    auto fits = [&](int64_t mult) {
        return v.shape.d >= mult * patch.d && v.shape.h >= mult * patch.h && v.shape.w >= mult * patch.w;
    };
    auto random_origin = [&](const Shape3& size) {
        Index3 o;
        o.z = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(v.shape.d - size.d + 1)));
        o.y = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(v.shape.h - size.h + 1)));
        o.x = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(v.shape.w - size.w + 1)));
        return o;
    };

    if (branch == 1 && fits(2)) {
        const Shape3 twice{2 * patch.d, 2 * patch.h, 2 * patch.w};
        const Index3 o = random_origin(twice);
        CropRecord rec{o, {o.z + twice.d - 1, o.y + twice.h - 1, o.x + twice.w - 1}, true, false, 1};
        return {resize_trilinear(crop(v, o, twice), patch), rec};
    }
    if (branch == 2 && fits(1)) {
        const Index3 o = random_origin(patch);
        CropRecord rec{o, {o.z + patch.d - 1, o.y + patch.h - 1, o.x + patch.w - 1}, false, false, 2};
        return {crop(v, o, patch), rec};
    }

    CropRecord rec = whole_volume_record(v.shape);
    rec.fallback = branch != 0;
    return {resize_trilinear(v, patch), rec};
}

}  // namespace voldiff
