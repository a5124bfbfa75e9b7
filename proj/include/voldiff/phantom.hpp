#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "voldiff/condition.hpp"
#include "voldiff/inverse.hpp"
#include "voldiff/rng.hpp"
#include "voldiff/volume.hpp"
#include "voldiff/vvol.hpp"

namespace voldiff {

struct EllipsoidSpec {
    int label = 1;
    std::array<double, 3> center{};  // z, y, x in voxels
    std::array<double, 3> radii{};
    double intensity = 0.0;  // normalized units
};

struct LesionSpec {
    std::array<double, 3> center{};
    double radius = 3.0;
    double intensity_offset = 0.4;
    int host_label = 1;  // the lesion mask is clipped to this component
};

struct PhantomSpec {
    Shape3 shape{32, 32, 32};
    RegionClass region = RegionClass::HaN;
    int num_classes = 6;
    std::vector<EllipsoidSpec> components;
    std::optional<LesionSpec> lesion;
    double texture_amplitude = 0.04;
    uint64_t seed = 0;
};

struct Phantom {
    Volume image;        // normalized units in [-1, 1]
    AnatomyMask anatomy;
    Volume lesion_mask;  // binary
};

// Region classes carry distinct background levels so region conditioning has a
// learnable, verifiable effect.
inline double region_background(RegionClass r) {
    switch (r) {
        case RegionClass::HaN: return 0.0;
        case RegionClass::Chest: return -0.5;
        default: return 0.2;
    }
}

// Smooth seeded random field: 4^3 normal noise upsampled trilinearly.
inline Volume smooth_texture_field(const Shape3& shape, double amplitude, Rng& rng) {
    Volume coarse({4, 4, 4});
    for (auto& v : coarse.data) v = rng.normal();
    Volume up = resize_trilinear(coarse, shape);
    for (auto& v : up.data) v *= amplitude;
    return up;
}

inline Phantom generate_phantom(const PhantomSpec& spec) {
    if (spec.num_classes < 2) throw std::invalid_argument("phantom needs at least 2 classes");
    std::set<int> seen;
    for (const auto& c : spec.components) {
        if (c.label < 1 || c.label >= spec.num_classes)
            throw std::invalid_argument("component label outside [1, num_classes)");
        if (!seen.insert(c.label).second) throw std::invalid_argument("duplicate component label");
        if (c.intensity < -1.0 || c.intensity > 1.0)
            throw std::invalid_argument("component intensity outside [-1, 1]");
        for (int axis = 0; axis < 3; ++axis) {
            if (c.radii[static_cast<size_t>(axis)] <= 0.0)
                throw std::invalid_argument("ellipsoid radii must be positive");
            if (c.center[static_cast<size_t>(axis)] - c.radii[static_cast<size_t>(axis)] < 0.0 ||
                c.center[static_cast<size_t>(axis)] + c.radii[static_cast<size_t>(axis)] >
                    static_cast<double>(spec.shape[axis] - 1))
                throw std::invalid_argument("ellipsoid extends outside the volume");
        }
    }

    Phantom p{Volume(spec.shape, region_background(spec.region)), AnatomyMask(spec.shape, spec.num_classes),
              Volume(spec.shape, 0.0)};
    p.image.region = spec.region;
    p.image.window = region_window(spec.region);
    p.lesion_mask.region = spec.region;

    for (const auto& c : spec.components) {
        for (int64_t z = 0; z < spec.shape.d; ++z)
            for (int64_t y = 0; y < spec.shape.h; ++y)
                for (int64_t x = 0; x < spec.shape.w; ++x) {
                    const double dz = (static_cast<double>(z) - c.center[0]) / c.radii[0];
                    const double dy = (static_cast<double>(y) - c.center[1]) / c.radii[1];
                    const double dx = (static_cast<double>(x) - c.center[2]) / c.radii[2];
                    if (dz * dz + dy * dy + dx * dx <= 1.0) {
                        p.anatomy.at(z, y, x) = c.label;
                        p.image.at(z, y, x) = c.intensity;
                    }
                }
    }

    if (spec.lesion) {
        const auto& l = *spec.lesion;
        for (int64_t z = 0; z < spec.shape.d; ++z)
            for (int64_t y = 0; y < spec.shape.h; ++y)
                for (int64_t x = 0; x < spec.shape.w; ++x) {
                    const double dz = static_cast<double>(z) - l.center[0];
                    const double dy = static_cast<double>(y) - l.center[1];
                    const double dx = static_cast<double>(x) - l.center[2];
                    if (dz * dz + dy * dy + dx * dx <= l.radius * l.radius &&
                        p.anatomy.at(z, y, x) == l.host_label) {
                        p.lesion_mask.at(z, y, x) = 1.0;
                        p.image.at(z, y, x) += l.intensity_offset;
                    }
                }
    }

    Rng rng(spec.seed);
    const Volume texture = smooth_texture_field(spec.shape, spec.texture_amplitude, rng);
    for (size_t i = 0; i < p.image.data.size(); ++i)
        p.image.data[i] = std::clamp(p.image.data[i] + texture.data[i], -1.0, 1.0);
    return p;
}

// y0 = x0 + sigma_n * z in normalized units.
inline Volume simulate_low_dose(const Volume& v, double sigma_n, Rng& rng) {
    if (sigma_n < 0.0) throw std::invalid_argument("sigma_n must be >= 0");
    Volume out = v;
    if (sigma_n == 0.0) return out;
    for (auto& x : out.data) x += sigma_n * rng.normal();
    return out;
}

// Thick-slice forward model: z-slab mean by sf; reflect-pads the depth (and
// flags it) when not divisible.
inline Volume simulate_thick_slice(const Volume& v, int sf, bool* padded = nullptr) {
    if (sf < 1) throw std::invalid_argument("sf must be >= 1");
    if (padded) *padded = false;
    Volume input = v;
    if (v.shape.d % sf != 0) {
        if (padded) *padded = true;
        const int64_t target = ((v.shape.d + sf - 1) / sf) * sf;
        Volume grown({target, v.shape.h, v.shape.w});
        grown.spacing = v.spacing;
        grown.window = v.window;
        grown.region = v.region;
        const int64_t plane = v.shape.h * v.shape.w;
        for (int64_t z = 0; z < target; ++z) {
            const int64_t src = z < v.shape.d ? z : 2 * v.shape.d - 2 - z;  // reflect
            std::copy(&v.data[static_cast<size_t>(src * plane)], &v.data[static_cast<size_t>((src + 1) * plane)],
                      &grown.data[static_cast<size_t>(z * plane)]);
        }
        input = std::move(grown);
    }
    DegradationOps ops;
    ops.sf = sf;
    return ops.apply_h(input);
}

// Dataset recipe for randomized phantoms. Components draw fixed per-label
// intensities with a small jitter so the anatomy channel stays informative.
struct PhantomRecipe {
    Shape3 shape{32, 32, 32};
    int num_classes = 6;
    double texture_amplitude = 0.04;
    double intensity_jitter = 0.05;
    double lesion_probability = 0.0;
    double lesion_min_offset = 0.35;
    double lesion_max_offset = 0.5;
    int min_components = 2;
    int max_components = 3;
};

inline double label_intensity(int label) {
    static const std::array<double, 8> table{0.0, 0.45, -0.25, 0.65, 0.1, -0.6, 0.3, -0.05};
    return table[static_cast<size_t>(label) % table.size()];
}

inline PhantomSpec random_phantom_spec(const PhantomRecipe& recipe, RegionClass region, bool with_lesion,
                                       uint64_t seed) {
    Rng rng(detail::splitmix64(seed ^ 0x9E3779B97F4A7C15ULL));
    PhantomSpec spec;
    spec.shape = recipe.shape;
    spec.region = region;
    spec.num_classes = recipe.num_classes;
    spec.texture_amplitude = recipe.texture_amplitude;
    spec.seed = seed;

    const int n_comp = recipe.min_components +
                       static_cast<int>(rng.uniform_int(
                           static_cast<uint64_t>(recipe.max_components - recipe.min_components + 1)));
    std::vector<int> labels;
    for (int l = 1; l < recipe.num_classes; ++l) labels.push_back(l);
    // deterministic partial shuffle picking n_comp distinct labels
    for (int i = 0; i < n_comp && i < static_cast<int>(labels.size()); ++i) {
        const size_t j = static_cast<size_t>(i) + rng.uniform_int(labels.size() - static_cast<size_t>(i));
        std::swap(labels[static_cast<size_t>(i)], labels[j]);
    }

    for (int i = 0; i < n_comp && i < static_cast<int>(labels.size()); ++i) {
        EllipsoidSpec e;
        e.label = labels[static_cast<size_t>(i)];
        for (int axis = 0; axis < 3; ++axis) {
            const double extent = static_cast<double>(spec.shape[axis] - 1);
            const double r = extent * (0.12 + 0.13 * rng.uniform());
            const double lo = r, hi = extent - r;
            e.radii[static_cast<size_t>(axis)] = r;
            e.center[static_cast<size_t>(axis)] = lo + (hi - lo) * rng.uniform();
        }
        e.intensity =
            std::clamp(label_intensity(e.label) + recipe.intensity_jitter * (2.0 * rng.uniform() - 1.0), -1.0, 1.0);
        spec.components.push_back(e);
    }

    if (with_lesion && !spec.components.empty()) {
        const EllipsoidSpec& host = spec.components.front();
        const double rmin = std::min({host.radii[0], host.radii[1], host.radii[2]});
        LesionSpec l;
        l.host_label = host.label;
        l.radius = std::max(1.5, rmin * (0.3 + 0.15 * rng.uniform()));
        for (int axis = 0; axis < 3; ++axis)
            l.center[static_cast<size_t>(axis)] =
                host.center[static_cast<size_t>(axis)] +
                (2.0 * rng.uniform() - 1.0) * 0.3 * host.radii[static_cast<size_t>(axis)];
        const double mag = recipe.lesion_min_offset +
                           (recipe.lesion_max_offset - recipe.lesion_min_offset) * rng.uniform();
        l.intensity_offset = rng.uniform() < 0.5 ? mag : -mag;
        spec.lesion = l;
    }
    return spec;
}

struct DatasetManifest {
    nlohmann::ordered_json json;
    std::vector<std::string> train, val, test;
};

// Writes n cases as out_dir/case_####/{image,anatomy,lesion}.vvol plus a
// manifest. Split rule: floor(5%) validation, floor(5%) test, remainder train.
inline DatasetManifest build_dataset(int n, const PhantomRecipe& recipe, uint64_t seed,
                                     const std::string& out_dir) {
    if (n < 1) throw std::invalid_argument("dataset needs at least one case");
    std::filesystem::create_directories(out_dir);

    Rng rng(seed);
    DatasetManifest m;
    nlohmann::ordered_json cases = nlohmann::ordered_json::array();
    const RegionClass regions[3] = {RegionClass::HaN, RegionClass::Chest, RegionClass::Abdomen};

    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "case_%04d", i);
        const RegionClass region = regions[rng.uniform_int(3)];
        const bool with_lesion = rng.uniform() < recipe.lesion_probability;
        const uint64_t case_seed = rng.raw();
        const PhantomSpec spec = random_phantom_spec(recipe, region, with_lesion, case_seed);
        const Phantom ph = generate_phantom(spec);

        const auto dir = std::filesystem::path(out_dir) / name;
        std::filesystem::create_directories(dir);
        write_vvol(ph.image, (dir / "image.vvol").string());
        Volume anatomy_vol(spec.shape);
        anatomy_vol.region = spec.region;
        for (size_t k = 0; k < anatomy_vol.data.size(); ++k)
            anatomy_vol.data[k] = static_cast<double>(ph.anatomy.labels[k]);
        write_vvol(anatomy_vol, (dir / "anatomy.vvol").string());
        write_vvol(ph.lesion_mask, (dir / "lesion.vvol").string());

        cases.push_back({{"id", name},
                         {"region", region_name(region)},
                         {"seed", case_seed},
                         {"lesion", with_lesion}});
    }

    const int n_val = static_cast<int>(std::floor(0.05 * n));
    const int n_test = static_cast<int>(std::floor(0.05 * n));
    const int n_train = n - n_val - n_test;
    nlohmann::ordered_json train = nlohmann::ordered_json::array(), val = nlohmann::ordered_json::array(),
                           test = nlohmann::ordered_json::array();
    for (int i = 0; i < n; ++i) {
        const std::string id = cases[static_cast<size_t>(i)]["id"].get<std::string>();
        if (i < n_train) {
            train.push_back(id);
            m.train.push_back(id);
        } else if (i < n_train + n_val) {
            val.push_back(id);
            m.val.push_back(id);
        } else {
            test.push_back(id);
            m.test.push_back(id);
        }
    }

    m.json["cases"] = cases;
    m.json["splits"] = {{"train", train}, {"val", val}, {"test", test}};
    m.json["recipe"] = {{"shape", {recipe.shape.d, recipe.shape.h, recipe.shape.w}},
                        {"num_classes", recipe.num_classes},
                        {"texture_amplitude", recipe.texture_amplitude},
                        {"lesion_probability", recipe.lesion_probability}};
    std::ofstream out(std::filesystem::path(out_dir) / "manifest.json");
    out << m.json.dump(2) << '\n';
    return m;
}

}  // namespace voldiff
