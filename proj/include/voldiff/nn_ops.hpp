#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "voldiff/volume.hpp"

// Layer primitives for the toy denoising network. Buffers are channel-major
// (channel, z, y, x) with x fastest. Backward passes are hand-derived per layer
// and validated against finite differences in the test suite.

namespace voldiff::detail {

// 3x3x3 convolution, stride 1, zero ("same") padding.
// w layout: [cout][cin][3][3][3], b: [cout].
inline void conv3d(const double* in, int cin, const Shape3& sp, const double* w, const double* b, int cout,
                   double* out) {
    const int64_t D = sp.d, H = sp.h, W = sp.w, n = sp.voxels();
    for (int co = 0; co < cout; ++co) {
        double* oc = out + static_cast<int64_t>(co) * n;
        const double bias = b ? b[co] : 0.0;
        for (int64_t i = 0; i < n; ++i) oc[i] = bias;
        for (int ci = 0; ci < cin; ++ci) {
            const double* icn = in + static_cast<int64_t>(ci) * n;
            const double* wk = w + (static_cast<int64_t>(co) * cin + ci) * 27;
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const double wv = wk[(dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)];
                        if (wv == 0.0) continue;
                        const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min<int64_t>(W, W - dx);
                        if (x0 >= x1) continue;
                        for (int64_t z = std::max<int64_t>(0, -dz); z < std::min<int64_t>(D, D - dz); ++z)
                            for (int64_t y = std::max<int64_t>(0, -dy); y < std::min<int64_t>(H, H - dy); ++y) {
                                double* orow = oc + (z * H + y) * W;
                                const double* irow = icn + ((z + dz) * H + (y + dy)) * W + dx;
                                for (int64_t x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                            }
                    }
        }
    }
}

inline void conv3d_grad_input(const double* gout, int cout, const Shape3& sp, const double* w, int cin,
                              double* gin) {
    const int64_t D = sp.d, H = sp.h, W = sp.w, n = sp.voxels();
    std::memset(gin, 0, sizeof(double) * static_cast<size_t>(cin) * static_cast<size_t>(n));
    for (int co = 0; co < cout; ++co) {
        const double* gc = gout + static_cast<int64_t>(co) * n;
        for (int ci = 0; ci < cin; ++ci) {
            double* gicn = gin + static_cast<int64_t>(ci) * n;
            const double* wk = w + (static_cast<int64_t>(co) * cin + ci) * 27;
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const double wv = wk[(dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)];
                        if (wv == 0.0) continue;
                        const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min<int64_t>(W, W - dx);
                        if (x0 >= x1) continue;
                        for (int64_t z = std::max<int64_t>(0, -dz); z < std::min<int64_t>(D, D - dz); ++z)
                            for (int64_t y = std::max<int64_t>(0, -dy); y < std::min<int64_t>(H, H - dy); ++y) {
                                const double* grow = gc + (z * H + y) * W;
                                double* irow = gicn + ((z + dz) * H + (y + dy)) * W + dx;
                                for (int64_t x = x0; x < x1; ++x) irow[x] += wv * grow[x];
                            }
                    }
        }
    }
}

inline void conv3d_grad_params(const double* gout, int cout, const double* in, int cin, const Shape3& sp,
                               double* gw, double* gb) {
    const int64_t D = sp.d, H = sp.h, W = sp.w, n = sp.voxels();
    for (int co = 0; co < cout; ++co) {
        const double* gc = gout + static_cast<int64_t>(co) * n;
        if (gb) {
            double s = 0.0;
            for (int64_t i = 0; i < n; ++i) s += gc[i];
            gb[co] += s;
        }
        for (int ci = 0; ci < cin; ++ci) {
            const double* icn = in + static_cast<int64_t>(ci) * n;
            double* wk = gw + (static_cast<int64_t>(co) * cin + ci) * 27;
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min<int64_t>(W, W - dx);
                        if (x0 >= x1) continue;
                        double acc = 0.0;
                        for (int64_t z = std::max<int64_t>(0, -dz); z < std::min<int64_t>(D, D - dz); ++z)
                            for (int64_t y = std::max<int64_t>(0, -dy); y < std::min<int64_t>(H, H - dy); ++y) {
                                const double* grow = gc + (z * H + y) * W;
                                const double* irow = icn + ((z + dz) * H + (y + dy)) * W + dx;
                                for (int64_t x = x0; x < x1; ++x) acc += grow[x] * irow[x];
                            }
                        wk[(dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)] += acc;
                    }
        }
    }
}

// 1x1x1 convolution (channel mixing); w: [cout][cin].
inline void conv1x1(const double* in, int cin, int64_t n, const double* w, const double* b, int cout, double* out) {
    for (int co = 0; co < cout; ++co) {
        double* oc = out + static_cast<int64_t>(co) * n;
        const double bias = b ? b[co] : 0.0;
        for (int64_t i = 0; i < n; ++i) oc[i] = bias;
        for (int ci = 0; ci < cin; ++ci) {
            const double wv = w[static_cast<int64_t>(co) * cin + ci];
            const double* icn = in + static_cast<int64_t>(ci) * n;
            for (int64_t i = 0; i < n; ++i) oc[i] += wv * icn[i];
        }
    }
}

inline void conv1x1_grad(const double* gout, int cout, const double* in, int cin, int64_t n, const double* w,
                         double* gw, double* gb, double* gin) {
    if (gin) std::memset(gin, 0, sizeof(double) * static_cast<size_t>(cin) * static_cast<size_t>(n));
    for (int co = 0; co < cout; ++co) {
        const double* gc = gout + static_cast<int64_t>(co) * n;
        if (gb) {
            double s = 0.0;
            for (int64_t i = 0; i < n; ++i) s += gc[i];
            gb[co] += s;
        }
        for (int ci = 0; ci < cin; ++ci) {
            const double* icn = in + static_cast<int64_t>(ci) * n;
            if (gw) {
                double acc = 0.0;
                for (int64_t i = 0; i < n; ++i) acc += gc[i] * icn[i];
                gw[static_cast<int64_t>(co) * cin + ci] += acc;
            }
            if (gin) {
                const double wv = w[static_cast<int64_t>(co) * cin + ci];
                double* gicn = gin + static_cast<int64_t>(ci) * n;
                for (int64_t i = 0; i < n; ++i) gicn[i] += wv * gc[i];
            }
        }
    }
}

struct GroupNormCache {
    std::vector<double> mean, rstd;  // per group
};

inline void group_norm(const double* in, int C, int groups, int64_t n, const double* gamma, const double* beta,
                       double* out, GroupNormCache& cache) {
    const int cg = C / groups;
    const double eps = 1e-5;
    cache.mean.assign(static_cast<size_t>(groups), 0.0);
    cache.rstd.assign(static_cast<size_t>(groups), 0.0);
    for (int g = 0; g < groups; ++g) {
        const double* gin = in + static_cast<int64_t>(g) * cg * n;
        const int64_t m = static_cast<int64_t>(cg) * n;
        double mean = 0.0;
        for (int64_t i = 0; i < m; ++i) mean += gin[i];
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            const double d = gin[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double rstd = 1.0 / std::sqrt(var + eps);
        cache.mean[static_cast<size_t>(g)] = mean;
        cache.rstd[static_cast<size_t>(g)] = rstd;
        for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            const double* ic = in + static_cast<int64_t>(ch) * n;
            double* oc = out + static_cast<int64_t>(ch) * n;
            const double ga = gamma[ch], be = beta[ch];
            for (int64_t i = 0; i < n; ++i) oc[i] = ga * (ic[i] - mean) * rstd + be;
        }
    }
}

inline void group_norm_grad(const double* gout, const double* in, int C, int groups, int64_t n, const double* gamma,
                            const GroupNormCache& cache, double* gin, double* ggamma, double* gbeta) {
    const int cg = C / groups;
    for (int g = 0; g < groups; ++g) {
        const double mean = cache.mean[static_cast<size_t>(g)];
        const double rstd = cache.rstd[static_cast<size_t>(g)];
        const int64_t m = static_cast<int64_t>(cg) * n;
        // sums over the group of dxhat and dxhat*xhat
        double s1 = 0.0, s2 = 0.0;
        for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            const double* gc = gout + static_cast<int64_t>(ch) * n;
            const double* ic = in + static_cast<int64_t>(ch) * n;
            const double ga = gamma[ch];
            double sg = 0.0, sgx = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const double xhat = (ic[i] - mean) * rstd;
                sg += gc[i];
                sgx += gc[i] * xhat;
            }
            if (gbeta) gbeta[ch] += sg;
            if (ggamma) ggamma[ch] += sgx;
            s1 += ga * sg;
            s2 += ga * sgx;
        }
        if (gin) {
            for (int c = 0; c < cg; ++c) {
                const int ch = g * cg + c;
                const double* gc = gout + static_cast<int64_t>(ch) * n;
                const double* ic = in + static_cast<int64_t>(ch) * n;
                double* gi = gin + static_cast<int64_t>(ch) * n;
                const double ga = gamma[ch];
                for (int64_t i = 0; i < n; ++i) {
                    const double xhat = (ic[i] - mean) * rstd;
                    gi[i] = rstd * (ga * gc[i] - (s1 + xhat * s2) / static_cast<double>(m));
                }
            }
        }
    }
}

inline double silu(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

// Average pooling by 2 in every axis; dimensions must be even.
inline void avgpool2(const double* in, int C, const Shape3& sp, double* out) {
    const int64_t D = sp.d, H = sp.h, W = sp.w;
    const int64_t Dh = D / 2, Hh = H / 2, Wh = W / 2;
    for (int c = 0; c < C; ++c) {
        const double* ic = in + static_cast<int64_t>(c) * D * H * W;
        double* oc = out + static_cast<int64_t>(c) * Dh * Hh * Wh;
        for (int64_t z = 0; z < Dh; ++z)
            for (int64_t y = 0; y < Hh; ++y)
                for (int64_t x = 0; x < Wh; ++x) {
                    double s = 0.0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                s += ic[((2 * z + dz) * H + 2 * y + dy) * W + 2 * x + dx];
                    oc[(z * Hh + y) * Wh + x] = s * 0.125;
                }
    }
}

inline void avgpool2_grad(const double* gout, int C, const Shape3& sp, double* gin) {
    const int64_t D = sp.d, H = sp.h, W = sp.w;
    const int64_t Dh = D / 2, Hh = H / 2, Wh = W / 2;
    for (int c = 0; c < C; ++c) {
        const double* gc = gout + static_cast<int64_t>(c) * Dh * Hh * Wh;
        double* gi = gin + static_cast<int64_t>(c) * D * H * W;
        for (int64_t z = 0; z < Dh; ++z)
            for (int64_t y = 0; y < Hh; ++y)
                for (int64_t x = 0; x < Wh; ++x) {
                    const double g = gc[(z * Hh + y) * Wh + x] * 0.125;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                gi[((2 * z + dz) * H + 2 * y + dy) * W + 2 * x + dx] = g;
                }
    }
}

// Nearest-neighbour upsampling by 2 per axis; sp is the output shape.
inline void upsample2(const double* in, int C, const Shape3& sp, double* out) {
    const int64_t D = sp.d, H = sp.h, W = sp.w;
    const int64_t Dh = D / 2, Hh = H / 2, Wh = W / 2;
    for (int c = 0; c < C; ++c) {
        const double* ic = in + static_cast<int64_t>(c) * Dh * Hh * Wh;
        double* oc = out + static_cast<int64_t>(c) * D * H * W;
        for (int64_t z = 0; z < D; ++z)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    oc[(z * H + y) * W + x] = ic[((z / 2) * Hh + y / 2) * Wh + x / 2];
    }
}

inline void upsample2_grad(const double* gout, int C, const Shape3& sp, double* gin) {
    const int64_t D = sp.d, H = sp.h, W = sp.w;
    const int64_t Dh = D / 2, Hh = H / 2, Wh = W / 2;
    std::memset(gin, 0, sizeof(double) * static_cast<size_t>(C) * static_cast<size_t>(Dh * Hh * Wh));
    for (int c = 0; c < C; ++c) {
        const double* gc = gout + static_cast<int64_t>(c) * D * H * W;
        double* gi = gin + static_cast<int64_t>(c) * Dh * Hh * Wh;
        for (int64_t z = 0; z < D; ++z)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    gi[((z / 2) * Hh + y / 2) * Wh + x / 2] += gc[(z * H + y) * W + x];
    }
}

// y = W x + b with W: [rows][cols].
inline void linear(const double* x, int cols, const double* w, const double* b, int rows, double* y) {
    for (int r = 0; r < rows; ++r) {
        double acc = b ? b[r] : 0.0;
        const double* wr = w + static_cast<int64_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += wr[c] * x[c];
        y[r] = acc;
    }
}

inline void linear_grad(const double* gy, int rows, const double* x, int cols, const double* w, double* gw,
                        double* gb, double* gx) {
    if (gx)
        for (int c = 0; c < cols; ++c) gx[c] = 0.0;
    for (int r = 0; r < rows; ++r) {
        const double g = gy[r];
        if (gb) gb[r] += g;
        const double* wr = w + static_cast<int64_t>(r) * cols;
        double* gwr = gw ? gw + static_cast<int64_t>(r) * cols : nullptr;
        for (int c = 0; c < cols; ++c) {
            if (gwr) gwr[c] += g * x[c];
            if (gx) gx[c] += wr[c] * g;
        }
    }
}

// Transformer-style sinusoidal embedding of an integer timestep.
inline std::vector<double> timestep_embedding(int t, int width) {
    const int half = width / 2;
    std::vector<double> e(static_cast<size_t>(width));
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[static_cast<size_t>(i)] = std::sin(t * freq);
        e[static_cast<size_t>(half + i)] = std::cos(t * freq);
    }
    return e;
}

inline int norm_groups_for(int channels) { return channels % 4 == 0 ? 4 : 2; }

}  // namespace voldiff::detail
