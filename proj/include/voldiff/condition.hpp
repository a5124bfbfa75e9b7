#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "voldiff/errors.hpp"
#include "voldiff/posenc.hpp"
#include "voldiff/volume.hpp"

namespace voldiff {

// Integer anatomy labels, 0 = background, same grid as the paired image patch.
struct AnatomyMask {
    Shape3 shape;
    int num_classes = 2;
    std::vector<int32_t> labels;

    AnatomyMask() = default;
    AnatomyMask(Shape3 s, int k) : shape(s), num_classes(k), labels(static_cast<size_t>(s.voxels()), 0) {
        if (k < 2) throw std::invalid_argument("anatomy needs at least 2 classes");
    }

    int32_t& at(int64_t z, int64_t y, int64_t x) {
        return labels[static_cast<size_t>((z * shape.h + y) * shape.w + x)];
    }
    int32_t at(int64_t z, int64_t y, int64_t x) const {
        return labels[static_cast<size_t>((z * shape.h + y) * shape.w + x)];
    }
};

// Everything the denoiser is conditioned on besides the noisy patch itself.
// The target member carries the task-specific condition (lesion mask or
// low-resolution image) consumed by the control adapter.
struct ConditionBundle {
    RegionClass region = RegionClass::HaN;
    AnatomyMask anatomy;
    CoordGrid coords;
    PositionEmbedding pos_embed;
    std::optional<Volume> target;
};

// Stable region index injected additively with the timestep embedding.
inline int region_embedding_index(RegionClass r) { return static_cast<int>(r); }

// Spatial condition-channel contract shared by checkpoints and the condition
// assembler. A saved model refuses inputs with a different declared layout.
struct ChannelLayout {
    int anatomy_classes = 6;
    int posenc_l = 6;

    int condition_channels() const { return 1 + 3 + 6 * posenc_l; }
    int input_channels() const { return 1 + condition_channels(); }
    bool operator==(const ChannelLayout&) const = default;

    nlohmann::ordered_json to_json() const {
        return {{"anatomy_classes", anatomy_classes},
                {"posenc_l", posenc_l},
                {"order", "anatomy,coords_xyz,posenc"}};
    }
    static ChannelLayout from_json(const nlohmann::json& j) {
        ChannelLayout l;
        l.anatomy_classes = j.at("anatomy_classes").get<int>();
        l.posenc_l = j.at("posenc_l").get<int>();
        return l;
    }
};

// Channel-major stack of the spatial condition channels, in the fixed order
// anatomy (1), coordinates x,y,z (3), position embedding (6L).
struct ChannelStack {
    Shape3 shape;
    int channels = 0;
    std::vector<double> data;  // channels * voxels
    int region_index = 0;
};

inline ChannelStack assemble_condition_channels(const ConditionBundle& b) {
    const Shape3 shape = b.coords.shape;
    if (b.anatomy.shape != shape || b.pos_embed.shape != shape)
        throw ShapeError("condition members disagree on the patch shape");
    if (b.anatomy.num_classes < 2) throw std::invalid_argument("anatomy needs at least 2 classes");

    const size_t n = static_cast<size_t>(shape.voxels());
    ChannelStack stack;
    stack.shape = shape;
    stack.channels = 4 + b.pos_embed.channel_count();
    stack.data.resize(static_cast<size_t>(stack.channels) * n);
    stack.region_index = region_embedding_index(b.region);

    double* out = stack.data.data();
    const double inv = 1.0 / static_cast<double>(b.anatomy.num_classes - 1);
    for (size_t i = 0; i < n; ++i) out[i] = static_cast<double>(b.anatomy.labels[i]) * inv;
    out += n;
    std::copy(b.coords.x.begin(), b.coords.x.end(), out);
    out += n;
    std::copy(b.coords.y.begin(), b.coords.y.end(), out);
    out += n;
    std::copy(b.coords.z.begin(), b.coords.z.end(), out);
    out += n;
    std::copy(b.pos_embed.channels.begin(), b.pos_embed.channels.end(), out);
    return stack;
}

// Bundle for a window of a larger volume: coordinates and embedding follow the
// crop record; anatomy is cropped from the volume-scale mask when given.
inline ConditionBundle make_bundle(RegionClass region, const AnatomyMask& anatomy, const Shape3& volume_shape,
                                   const CropRecord& record, const Shape3& patch, int L) {
    ConditionBundle b;
    b.region = region;
    b.anatomy = anatomy;
    b.coords = coord_grid_for_window(volume_shape, record, patch);
    b.pos_embed = fourier_encode(b.coords, L);
    return b;
}

namespace detail {

// Source voxel index for patch index j under the record's linear mapping; the
// same convention the coordinate grid uses, rounded to the nearest voxel.
inline int64_t record_source_index(const CropRecord& rec, int axis, int64_t j, int64_t patch_extent) {
    const double lo = static_cast<double>(rec.lo[axis]);
    const double hi = static_cast<double>(rec.hi[axis]);
    const double g = (patch_extent == 1)
                         ? (lo + hi) / 2.0
                         : lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(patch_extent - 1);
    return static_cast<int64_t>(std::llround(g));
}

}  // namespace detail

// Nearest-voxel resampling of a label mask onto a patch under a crop record.
// Direct crops reproduce the labels exactly; resized records snap each patch
// voxel to its nearest source voxel.
inline AnatomyMask anatomy_for_record(const AnatomyMask& full, const CropRecord& record, const Shape3& patch) {
    AnatomyMask out(patch, full.num_classes);
    for (int64_t z = 0; z < patch.d; ++z) {
        const int64_t sz = detail::record_source_index(record, 0, z, patch.d);
        for (int64_t y = 0; y < patch.h; ++y) {
            const int64_t sy = detail::record_source_index(record, 1, y, patch.h);
            for (int64_t x = 0; x < patch.w; ++x) {
                const int64_t sx = detail::record_source_index(record, 2, x, patch.w);
                out.at(z, y, x) = full.at(sz, sy, sx);
            }
        }
    }
    return out;
}

// Same nearest-voxel resampling for binary mask volumes (lesion targets).
inline Volume mask_for_record(const Volume& full, const CropRecord& record, const Shape3& patch) {
    Volume out(patch);
    out.spacing = full.spacing;
    out.window = full.window;
    out.region = full.region;
    for (int64_t z = 0; z < patch.d; ++z) {
        const int64_t sz = detail::record_source_index(record, 0, z, patch.d);
        for (int64_t y = 0; y < patch.h; ++y) {
            const int64_t sy = detail::record_source_index(record, 1, y, patch.h);
            for (int64_t x = 0; x < patch.w; ++x) {
                const int64_t sx = detail::record_source_index(record, 2, x, patch.w);
                out.at(z, y, x) = full.at(sz, sy, sx);
            }
        }
    }
    return out;
}

}  // namespace voldiff
