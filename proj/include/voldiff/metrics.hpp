#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

#include "voldiff/errors.hpp"
#include "voldiff/volume.hpp"

namespace voldiff {

inline double mse(const Volume& a, const Volume& b) {
    if (a.shape != b.shape) throw ShapeError("metric operands disagree on shape");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

// 10 log10(range^2 / MSE); identical volumes report +infinity.
inline double psnr(const Volume& a, const Volume& b, double data_range) {
    if (!(data_range > 0.0)) throw std::invalid_argument("data_range must be positive");
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / m);
}

namespace detail {

inline std::vector<double> gaussian_kernel7(double sigma = 1.5) {
    std::vector<double> k(7);
    double sum = 0.0;
    for (int i = 0; i < 7; ++i) {
        const double d = i - 3.0;
        k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// One valid-mode pass of the 7-tap kernel along the given axis.
inline std::vector<double> filter_axis(const std::vector<double>& in, Shape3& sp, int axis,
                                       const std::vector<double>& k) {
    Shape3 out_sp = sp;
    const int64_t reduced = sp[axis] - 6;
    if (axis == 0) out_sp.d = reduced;
    if (axis == 1) out_sp.h = reduced;
    if (axis == 2) out_sp.w = reduced;
    std::vector<double> out(static_cast<size_t>(out_sp.voxels()));
    const int64_t D = sp.d, H = sp.h, W = sp.w;
    for (int64_t z = 0; z < out_sp.d; ++z)
        for (int64_t y = 0; y < out_sp.h; ++y)
            for (int64_t x = 0; x < out_sp.w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < 7; ++i) {
                    const int64_t zz = z + (axis == 0 ? i : 0);
                    const int64_t yy = y + (axis == 1 ? i : 0);
                    const int64_t xx = x + (axis == 2 ? i : 0);
                    acc += k[static_cast<size_t>(i)] * in[static_cast<size_t>((zz * H + yy) * W + xx)];
                }
                out[static_cast<size_t>((z * out_sp.h + y) * out_sp.w + x)] = acc;
            }
    (void)D;
    sp = out_sp;
    return out;
}

inline std::vector<double> gaussian_filter_valid(const std::vector<double>& in, const Shape3& shape) {
    static const std::vector<double> k = gaussian_kernel7();
    Shape3 sp = shape;
    std::vector<double> out = filter_axis(in, sp, 2, k);
    out = filter_axis(out, sp, 1, k);
    out = filter_axis(out, sp, 0, k);
    return out;
}

}  // namespace detail

// Mean local SSIM over 7^3 neighbourhoods weighted by a sigma = 1.5 Gaussian,
// evaluated wherever the full window fits. C1 = (0.01 range)^2, C2 = (0.03 range)^2.
inline double ssim3d(const Volume& a, const Volume& b, double data_range) {
    if (a.shape != b.shape) throw ShapeError("metric operands disagree on shape");
    if (a.shape.d < 7 || a.shape.h < 7 || a.shape.w < 7)
        throw std::invalid_argument("ssim3d needs every extent >= 7");
    if (!(data_range > 0.0)) throw std::invalid_argument("data_range must be positive");

    const size_t n = a.data.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (size_t i = 0; i < n; ++i) {
        aa[i] = a.data[i] * a.data[i];
        bb[i] = b.data[i] * b.data[i];
        ab[i] = a.data[i] * b.data[i];
    }
    const auto mu_a = detail::gaussian_filter_valid(a.data, a.shape);
    const auto mu_b = detail::gaussian_filter_valid(b.data, a.shape);
    const auto e_aa = detail::gaussian_filter_valid(aa, a.shape);
    const auto e_bb = detail::gaussian_filter_valid(bb, a.shape);
    const auto e_ab = detail::gaussian_filter_valid(ab, a.shape);

    const double c1 = 0.01 * data_range * 0.01 * data_range;
    const double c2 = 0.03 * data_range * 0.03 * data_range;
    double acc = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(mu_a.size());
}

inline Volume downsample2_mean(const Volume& v) {
    const Shape3 out_sp{v.shape.d / 2, v.shape.h / 2, v.shape.w / 2};
    Volume out(out_sp);
    for (int64_t z = 0; z < out_sp.d; ++z)
        for (int64_t y = 0; y < out_sp.h; ++y)
            for (int64_t x = 0; x < out_sp.w; ++x) {
                double s = 0.0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) s += v.at(2 * z + dz, 2 * y + dy, 2 * x + dx);
                out.at(z, y, x) = s * 0.125;
            }
    return out;
}

inline const std::vector<double>& ms_ssim_standard_weights() {
    static const std::vector<double> w{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    return w;
}

// Product of per-scale SSIM values weighted by the standard 5-scale exponents,
// truncated to the scales the extent allows and renormalized to sum 1. Scales
// halve by 2x2x2 mean pooling. Negative per-scale values clamp to zero.
inline double ms_ssim3d(const Volume& a, const Volume& b, double data_range,
                        const std::vector<double>& weights = ms_ssim_standard_weights()) {
    if (a.shape != b.shape) throw ShapeError("metric operands disagree on shape");
    if (a.shape.d < 7 || a.shape.h < 7 || a.shape.w < 7)
        throw std::invalid_argument("ms_ssim3d needs every extent >= 7 at the first scale");

    std::vector<double> per_scale;
    Volume ca = a, cb = b;
    while (per_scale.size() < weights.size()) {
        per_scale.push_back(ssim3d(ca, cb, data_range));
        const Shape3 next{ca.shape.d / 2, ca.shape.h / 2, ca.shape.w / 2};
        if (per_scale.size() == weights.size() || next.d < 7 || next.h < 7 || next.w < 7) break;
        ca = downsample2_mean(ca);
        cb = downsample2_mean(cb);
    }

    double wsum = 0.0;
    for (size_t i = 0; i < per_scale.size(); ++i) wsum += weights[i];
    double prod = 1.0;
    for (size_t i = 0; i < per_scale.size(); ++i) {
        const double v = std::max(0.0, per_scale[i]);
        prod *= std::pow(v, weights[i] / wsum);
    }
    return prod;
}

// 2|A n B| / (|A| + |B|); two empty masks count as perfect agreement.
inline double dice(const Volume& a, const Volume& b) {
    if (a.shape != b.shape) throw ShapeError("metric operands disagree on shape");
    int64_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double va = a.data[i], vb = b.data[i];
        if ((va != 0.0 && va != 1.0) || (vb != 0.0 && vb != 1.0))
            throw std::invalid_argument("dice needs binary masks");
        na += va != 0.0;
        nb += vb != 0.0;
        inter += (va != 0.0 && vb != 0.0);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// Mann-Whitney statistic with ties contributing one half.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("scores and labels disagree on length");
    int64_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) throw std::domain_error("auroc needs both classes");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return scores[i] < scores[j]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace detail {

// 6-connected component labelling of a binary mask; returns voxel lists.
inline std::vector<std::vector<int64_t>> connected_components6(const Volume& mask) {
    const int64_t D = mask.shape.d, H = mask.shape.h, W = mask.shape.w;
    std::vector<int32_t> label(static_cast<size_t>(mask.voxels()), -1);
    std::vector<std::vector<int64_t>> comps;
    for (int64_t start = 0; start < mask.voxels(); ++start) {
        if (mask.data[static_cast<size_t>(start)] == 0.0 || label[static_cast<size_t>(start)] >= 0) continue;
        const int32_t id = static_cast<int32_t>(comps.size());
        comps.emplace_back();
        std::queue<int64_t> q;
        q.push(start);
        label[static_cast<size_t>(start)] = id;
        while (!q.empty()) {
            const int64_t i = q.front();
            q.pop();
            comps.back().push_back(i);
            const int64_t z = i / (H * W), y = (i / W) % H, x = i % W;
            const int64_t nbs[6][3] = {{z - 1, y, x}, {z + 1, y, x}, {z, y - 1, x},
                                       {z, y + 1, x}, {z, y, x - 1}, {z, y, x + 1}};
            for (const auto& nb : nbs) {
                if (nb[0] < 0 || nb[0] >= D || nb[1] < 0 || nb[1] >= H || nb[2] < 0 || nb[2] >= W) continue;
                const int64_t j = (nb[0] * H + nb[1]) * W + nb[2];
                if (mask.data[static_cast<size_t>(j)] != 0.0 && label[static_cast<size_t>(j)] < 0) {
                    label[static_cast<size_t>(j)] = id;
                    q.push(j);
                }
            }
        }
    }
    return comps;
}

}  // namespace detail

// Per-region overlap: sweep thresholds over every distinct score, track the
// mean per-connected-component overlap against the false-positive rate, and
// integrate the curve over FPR in [0, fpr_limit] by trapezoid, normalized by
// the limit. Components use 6-connectivity.
inline double pro(const std::vector<Volume>& abs_maps, const std::vector<Volume>& gt_masks,
                  double fpr_limit = 0.3) {
    if (abs_maps.size() != gt_masks.size() || abs_maps.empty())
        throw std::invalid_argument("pro needs matched non-empty map/mask lists");
    if (!(fpr_limit > 0.0)) throw std::invalid_argument("fpr_limit must be positive");

    struct VoxelRef {
        double score;
        int32_t comp;  // -1 for negatives
    };
    std::vector<VoxelRef> voxels;
    std::vector<int64_t> comp_sizes;
    int64_t total_neg = 0;

    for (size_t c = 0; c < abs_maps.size(); ++c) {
        if (abs_maps[c].shape != gt_masks[c].shape) throw ShapeError("map and mask shapes differ");
        const auto comps = detail::connected_components6(gt_masks[c]);
        std::vector<int32_t> comp_of(static_cast<size_t>(gt_masks[c].voxels()), -1);
        for (const auto& comp : comps) {
            const int32_t id = static_cast<int32_t>(comp_sizes.size());
            comp_sizes.push_back(static_cast<int64_t>(comp.size()));
            for (int64_t i : comp) comp_of[static_cast<size_t>(i)] = id;
        }
        for (int64_t i = 0; i < abs_maps[c].voxels(); ++i) {
            const int32_t id = comp_of[static_cast<size_t>(i)];
            if (id < 0) ++total_neg;
            voxels.push_back({abs_maps[c].data[static_cast<size_t>(i)], id});
        }
    }
    if (comp_sizes.empty()) throw std::domain_error("pro needs at least one ground-truth component");
    if (total_neg == 0) throw std::domain_error("pro needs negative voxels for the FPR axis");

    std::sort(voxels.begin(), voxels.end(), [](const VoxelRef& a, const VoxelRef& b) { return a.score > b.score; });

    std::vector<int64_t> tp(comp_sizes.size(), 0);
    int64_t fp = 0;
    std::vector<std::pair<double, double>> curve;  // (fpr, mean overlap), fpr non-decreasing
    curve.emplace_back(0.0, 0.0);                  // threshold above every score

    size_t i = 0;
    while (i < voxels.size()) {
        size_t j = i;
        while (j + 1 < voxels.size() && voxels[j + 1].score == voxels[i].score) ++j;
        for (size_t k = i; k <= j; ++k) {
            if (voxels[k].comp < 0)
                ++fp;
            else
                ++tp[static_cast<size_t>(voxels[k].comp)];
        }
        double overlap = 0.0;
        for (size_t c = 0; c < comp_sizes.size(); ++c)
            overlap += static_cast<double>(tp[c]) / static_cast<double>(comp_sizes[c]);
        overlap /= static_cast<double>(comp_sizes.size());
        curve.emplace_back(static_cast<double>(fp) / static_cast<double>(total_neg), overlap);
        i = j + 1;
    }

    // trapezoid over fpr in [0, fpr_limit], interpolating at the cut
    double integral = 0.0;
    for (size_t k = 1; k < curve.size(); ++k) {
        double f0 = curve[k - 1].first, f1 = curve[k].first;
        double o0 = curve[k - 1].second, o1 = curve[k].second;
        if (f0 >= fpr_limit) break;
        if (f1 > fpr_limit) {
            const double w = (fpr_limit - f0) / (f1 - f0);
            o1 = o0 + w * (o1 - o0);
            f1 = fpr_limit;
        }
        integral += 0.5 * (o0 + o1) * (f1 - f0);
    }
    // flat extension when the curve ends before the limit
    if (!curve.empty() && curve.back().first < fpr_limit)
        integral += curve.back().second * (fpr_limit - curve.back().first);
    return integral / fpr_limit;
}

}  // namespace voldiff
