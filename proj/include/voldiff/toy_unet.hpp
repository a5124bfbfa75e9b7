#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "voldiff/condition.hpp"
#include "voldiff/denoiser.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/nn_ops.hpp"
#include "voldiff/rng.hpp"
#include "voldiff/sampler.hpp"
#include "voldiff/threadpool.hpp"

namespace voldiff {

// Ordered collection of named parameter tensors. Iteration order is the
// registration order, fixed by the network topology, so reductions and
// checkpoints are deterministic.
class ParamSet {
public:
    std::vector<double>& add(const std::string& name, size_t size) {
        names_.push_back(name);
        return tensors_[name] = std::vector<double>(size, 0.0);
    }
    std::vector<double>& get(const std::string& name) { return tensors_.at(name); }
    const std::vector<double>& get(const std::string& name) const { return tensors_.at(name); }
    bool has(const std::string& name) const { return tensors_.count(name) != 0; }
    const std::vector<std::string>& names() const { return names_; }

    ParamSet zeros_like() const {
        ParamSet p;
        for (const auto& n : names_) p.add(n, tensors_.at(n).size());
        return p;
    }

    template <class F>
    void for_each(F&& f) {
        for (const auto& n : names_) f(n, tensors_.at(n));
    }
    template <class F>
    void for_each(F&& f) const {
        for (const auto& n : names_) f(n, tensors_.at(n));
    }

    void fill(double v) {
        for (auto& [name, t] : tensors_) std::fill(t.begin(), t.end(), v);
    }
    void accumulate(const ParamSet& other) {
        for (const auto& n : names_) {
            auto& dst = tensors_.at(n);
            const auto& src = other.get(n);
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }
    size_t total_size() const {
        size_t s = 0;
        for (const auto& [n, t] : tensors_) s += t.size();
        return s;
    }

private:
    std::vector<std::string> names_;
    std::map<std::string, std::vector<double>> tensors_;
};

struct ToyUNetConfig {
    ChannelLayout layout;
    int base_channels = 8;   // must be even
    int emb_width = 32;      // must be even
    int schedule_T = 1000;   // for the fixed input shortcut coefficient
};

namespace detail {

// conv3 -> group norm -> +per-channel time bias -> silu
struct BlockCache {
    std::vector<double> in, conv_out, biased, out;
    GroupNormCache gn;
    Shape3 shape;
    int cin = 0, cout = 0;
};

inline void block_forward(const ParamSet& p, const std::string& prefix, const double* in, int cin, int cout,
                          const Shape3& sp, const std::vector<double>& emb, BlockCache& c) {
    const int64_t n = sp.voxels();
    c.shape = sp;
    c.cin = cin;
    c.cout = cout;
    c.in.assign(in, in + static_cast<int64_t>(cin) * n);
    c.conv_out.resize(static_cast<size_t>(cout) * static_cast<size_t>(n));
    conv3d(in, cin, sp, p.get(prefix + ".conv.w").data(), p.get(prefix + ".conv.b").data(), cout,
           c.conv_out.data());

    std::vector<double> normed(c.conv_out.size());
    group_norm(c.conv_out.data(), cout, norm_groups_for(cout), n, p.get(prefix + ".gn.gamma").data(),
               p.get(prefix + ".gn.beta").data(), normed.data(), c.gn);

    std::vector<double> bias(static_cast<size_t>(cout));
    linear(emb.data(), static_cast<int>(emb.size()), p.get(prefix + ".emb.w").data(),
           p.get(prefix + ".emb.b").data(), cout, bias.data());

    c.biased.resize(normed.size());
    c.out.resize(normed.size());
    for (int ch = 0; ch < cout; ++ch) {
        const double bv = bias[static_cast<size_t>(ch)];
        const double* src = normed.data() + static_cast<int64_t>(ch) * n;
        double* bd = c.biased.data() + static_cast<int64_t>(ch) * n;
        double* od = c.out.data() + static_cast<int64_t>(ch) * n;
        for (int64_t i = 0; i < n; ++i) {
            bd[i] = src[i] + bv;
            od[i] = silu(bd[i]);
        }
    }
}

// grads may be null (frozen parameters); g_in may be null (input layer);
// g_emb accumulates the gradient w.r.t. the injected embedding when non-null.
inline void block_backward(const ParamSet& p, const std::string& prefix, const double* g_out, const BlockCache& c,
                           const std::vector<double>& emb, ParamSet* grads, double* g_emb, double* g_in) {
    const int64_t n = c.shape.voxels();
    const int cout = c.cout, cin = c.cin;

    std::vector<double> g_biased(static_cast<size_t>(cout) * static_cast<size_t>(n));
    for (size_t i = 0; i < g_biased.size(); ++i) g_biased[i] = g_out[i] * silu_grad(c.biased[i]);

    std::vector<double> g_bias(static_cast<size_t>(cout), 0.0);
    for (int ch = 0; ch < cout; ++ch) {
        const double* g = g_biased.data() + static_cast<int64_t>(ch) * n;
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += g[i];
        g_bias[static_cast<size_t>(ch)] = s;
    }
    if (grads || g_emb)
        linear_grad(g_bias.data(), cout, emb.data(), static_cast<int>(emb.size()),
                    p.get(prefix + ".emb.w").data(), grads ? grads->get(prefix + ".emb.w").data() : nullptr,
                    grads ? grads->get(prefix + ".emb.b").data() : nullptr, nullptr);
    if (g_emb) {
        const double* w = p.get(prefix + ".emb.w").data();
        const int e = static_cast<int>(emb.size());
        for (int ch = 0; ch < cout; ++ch)
            for (int k = 0; k < e; ++k) g_emb[k] += w[ch * e + k] * g_bias[static_cast<size_t>(ch)];
    }

    std::vector<double> g_conv(static_cast<size_t>(cout) * static_cast<size_t>(n));
    group_norm_grad(g_biased.data(), c.conv_out.data(), cout, norm_groups_for(cout), n,
                    p.get(prefix + ".gn.gamma").data(), c.gn, g_conv.data(),
                    grads ? grads->get(prefix + ".gn.gamma").data() : nullptr,
                    grads ? grads->get(prefix + ".gn.beta").data() : nullptr);

    if (grads)
        conv3d_grad_params(g_conv.data(), cout, c.in.data(), cin, c.shape, grads->get(prefix + ".conv.w").data(),
                           grads->get(prefix + ".conv.b").data());
    if (g_in) conv3d_grad_input(g_conv.data(), cout, c.shape, p.get(prefix + ".conv.w").data(), cin, g_in);
}

struct UNetCaches {
    Shape3 patch, half;
    std::vector<double> input;  // [cin][n]
    std::vector<double> emb_t;  // sinusoid + region
    std::vector<double> emb_h;  // pre-activation of the first mlp layer
    std::vector<double> emb;    // final embedding used by blocks
    int region = 0;
    BlockCache enc1a, enc1b, enc2a, enc2b, bott, dec1a, dec1b;
    std::vector<double> pooled, bt, up, cat;
};

}  // namespace detail

// Two-level conditional encoder-decoder of 3^3 convolutions with group
// normalization, sinusoidal timestep embedding, additive region embedding, a
// residual bottleneck, and one skip connection. Input channels are the noisy
// patch plus the assembled condition channels; output is the predicted noise.
class ToyUNet : public Denoiser {
public:
    explicit ToyUNet(const ToyUNetConfig& cfg) : cfg_(cfg), sched_(cosine_schedule(cfg.schedule_T)) {
        if (cfg.base_channels < 2 || cfg.base_channels % 2 != 0)
            throw std::invalid_argument("base_channels must be even and >= 2");
        if (cfg.emb_width < 2 || cfg.emb_width % 2 != 0)
            throw std::invalid_argument("emb_width must be even and >= 2");
        register_params();
    }

    const ToyUNetConfig& config() const { return cfg_; }
    const ParamSet& params() const { return params_; }
    ParamSet& mutable_params() { return params_; }

    // He-style initialization; the output projection starts at zero unless the
    // caller wants fully random parameters (finite-difference tests do).
    void init_params(Rng& rng, bool final_zero = true) {
        params_.for_each([&](const std::string& name, std::vector<double>& v) {
            if (name.ends_with(".gn.gamma")) {
                std::fill(v.begin(), v.end(), 1.0);
            } else if (name.ends_with(".gn.beta") || name.ends_with(".b") || name.ends_with(".b1") ||
                       name.ends_with(".b2")) {
                std::fill(v.begin(), v.end(), 0.0);
            } else if (name == "out.w") {
                const double sc = final_zero ? 0.0 : 0.05;
                for (auto& x : v) x = sc * rng.normal();
            } else if (name.starts_with("region.")) {
                for (auto& x : v) x = 0.1 * rng.normal();
            } else if (name.ends_with(".emb.w")) {
                const double sc = 1.0 / std::sqrt(static_cast<double>(cfg_.emb_width));
                for (auto& x : v) x = sc * rng.normal();
            } else if (name.starts_with("time.")) {
                const double sc = 1.0 / std::sqrt(static_cast<double>(cfg_.emb_width));
                for (auto& x : v) x = sc * rng.normal();
            } else {
                // conv weights: fan_in = cin * 27 encoded in the tensor size / cout
                const size_t cout = params_.get(conv_bias_name(name)).size();
                const double fan_in = static_cast<double>(v.size() / cout);
                const double sc = std::sqrt(2.0 / fan_in);
                for (auto& x : v) x = sc * rng.normal();
            }
        });
        if (final_zero) std::fill(params_.get("out.b").begin(), params_.get("out.b").end(), 0.0);
    }

    Volume predict_noise(const Volume& x_t, int t, const ConditionBundle& cond) const override {
        detail::UNetCaches ws;
        return forward(x_t, t, cond, ws);
    }

    // L1 objective on the noise prediction: loss = mean |eps - eps_hat|.
    // Accumulates parameter gradients into `grads` and returns the loss.
    double loss_and_gradients(const Volume& x_t, int t, const ConditionBundle& cond, const Volume& eps_target,
                              ParamSet& grads) const {
        detail::UNetCaches ws;
        const Volume eps_hat = forward(x_t, t, cond, ws);
        const int64_t n = eps_hat.voxels();

        double loss = 0.0;
        std::vector<double> g_out(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            const double r = eps_hat.data[static_cast<size_t>(i)] - eps_target.data[static_cast<size_t>(i)];
            loss += std::abs(r);
            g_out[static_cast<size_t>(i)] = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) / static_cast<double>(n);
        }
        backward(ws, g_out.data(), &grads);
        return loss / static_cast<double>(n);
    }

    // Fixed input shortcut: at large t the optimal noise estimate is nearly
    // x_t itself, which a group-normalized conv stack reproduces poorly, so the
    // network learns only the correction on top of sqrt(1 - abar_t) * x_t.
    double shortcut_coefficient(int t) const {
        if (t < 0 || t > sched_.T) throw std::invalid_argument("timestep out of range for this model");
        return std::sqrt(1.0 - sched_.alpha_bar[static_cast<size_t>(t)]);
    }

    // Exposed for the control adapter, which re-sequences the same stages.
    Volume forward(const Volume& x_t, int t, const ConditionBundle& cond, detail::UNetCaches& ws) const {
        const Shape3 sp = x_t.shape;
        if (sp.d % 2 != 0 || sp.h % 2 != 0 || sp.w % 2 != 0)
            throw std::invalid_argument("patch dimensions must be even");
        encode_input(x_t, cond, ws);
        compute_embedding(t, ws);
        run_encoder(params_, ws);
        run_decoder(ws, ws.bt.data(), ws.enc1b.out.data());

        Volume out = x_t.like();
        detail::conv3d(ws.dec1b.out.data(), cfg_.base_channels, sp, params_.get("out.w").data(),
               params_.get("out.b").data(), 1, out.data.data());
        const double sc = shortcut_coefficient(t);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += sc * x_t.data[i];
        return out;
    }

    void encode_input(const Volume& x_t, const ConditionBundle& cond, detail::UNetCaches& ws) const {
        const ChannelStack stack = assemble_condition_channels(cond);
        if (stack.shape != x_t.shape) throw ShapeError("condition stack does not match the patch");
        if (stack.channels != cfg_.layout.condition_channels())
            throw ShapeError("condition channels do not match the model layout");
        if (cond.anatomy.num_classes != cfg_.layout.anatomy_classes)
            throw ShapeError("anatomy class count does not match the model layout");
        const int64_t n = x_t.voxels();
        ws.patch = x_t.shape;
        ws.half = {x_t.shape.d / 2, x_t.shape.h / 2, x_t.shape.w / 2};
        ws.region = stack.region_index;
        ws.input.resize(static_cast<size_t>(cfg_.layout.input_channels()) * static_cast<size_t>(n));
        std::copy(x_t.data.begin(), x_t.data.end(), ws.input.begin());
        std::copy(stack.data.begin(), stack.data.end(), ws.input.begin() + n);
    }

    void compute_embedding(int t, detail::UNetCaches& ws) const {
        const int E = cfg_.emb_width;
        ws.emb_t = detail::timestep_embedding(t, E);
        const double* re = params_.get("region.embed").data() + static_cast<int64_t>(ws.region) * E;
        for (int i = 0; i < E; ++i) ws.emb_t[static_cast<size_t>(i)] += re[i];

        ws.emb_h.resize(static_cast<size_t>(E));
        detail::linear(ws.emb_t.data(), E, params_.get("time.w1").data(), params_.get("time.b1").data(), E,
               ws.emb_h.data());
        std::vector<double> act(static_cast<size_t>(E));
        for (int i = 0; i < E; ++i) act[static_cast<size_t>(i)] = detail::silu(ws.emb_h[static_cast<size_t>(i)]);
        ws.emb.resize(static_cast<size_t>(E));
        detail::linear(act.data(), E, params_.get("time.w2").data(), params_.get("time.b2").data(), E, ws.emb.data());
    }

    // Runs enc1a..bottleneck with the given parameter set (the control adapter
    // re-runs it with its trainable copy).
    void run_encoder(const ParamSet& p, detail::UNetCaches& ws) const {
        const int B = cfg_.base_channels;
        const int64_t n = ws.patch.voxels(), nh = ws.half.voxels();
        detail::block_forward(p, "enc1a", ws.input.data(), cfg_.layout.input_channels(), B, ws.patch, ws.emb,
                              ws.enc1a);
        detail::block_forward(p, "enc1b", ws.enc1a.out.data(), B, B, ws.patch, ws.emb, ws.enc1b);
        ws.pooled.resize(static_cast<size_t>(B) * static_cast<size_t>(nh));
        detail::avgpool2(ws.enc1b.out.data(), B, ws.patch, ws.pooled.data());
        detail::block_forward(p, "enc2a", ws.pooled.data(), B, 2 * B, ws.half, ws.emb, ws.enc2a);
        detail::block_forward(p, "enc2b", ws.enc2a.out.data(), 2 * B, 2 * B, ws.half, ws.emb, ws.enc2b);
        detail::block_forward(p, "bott", ws.enc2b.out.data(), 2 * B, 2 * B, ws.half, ws.emb, ws.bott);
        ws.bt.resize(ws.bott.out.size());
        for (size_t i = 0; i < ws.bt.size(); ++i) ws.bt[i] = ws.enc2b.out[i] + ws.bott.out[i];
        (void)n;
    }

    // Decoder on a (possibly adjusted) bottleneck and skip; always base params.
    void run_decoder(detail::UNetCaches& ws, const double* bottleneck, const double* skip) const {
        const int B = cfg_.base_channels;
        const int64_t n = ws.patch.voxels();
        ws.up.resize(static_cast<size_t>(2 * B) * static_cast<size_t>(n));
        detail::upsample2(bottleneck, 2 * B, ws.patch, ws.up.data());
        ws.cat.resize(static_cast<size_t>(3 * B) * static_cast<size_t>(n));
        std::copy(ws.up.begin(), ws.up.end(), ws.cat.begin());
        std::copy(skip, skip + static_cast<int64_t>(B) * n, ws.cat.begin() + static_cast<int64_t>(2 * B) * n);
        detail::block_forward(params_, "dec1a", ws.cat.data(), 3 * B, B, ws.patch, ws.emb, ws.dec1a);
        detail::block_forward(params_, "dec1b", ws.dec1a.out.data(), B, B, ws.patch, ws.emb, ws.dec1b);
    }

    // Backward through the full standard topology. g_out is the gradient on the
    // final 1-channel output. When grads is null only input-side gradients are
    // produced (frozen network); g_bottleneck/g_skip, when non-null, receive the
    // decoder-input gradients (used by the control adapter).
    void backward(const detail::UNetCaches& ws, const double* g_out, ParamSet* grads, double* g_bottleneck = nullptr,
                  double* g_skip = nullptr) const {
        const int B = cfg_.base_channels;
        const int64_t n = ws.patch.voxels(), nh = ws.half.voxels();
        const int E = cfg_.emb_width;
        std::vector<double> g_emb(static_cast<size_t>(E), 0.0);

        // output conv
        std::vector<double> g_d2(static_cast<size_t>(B) * static_cast<size_t>(n));
        if (grads)
            detail::conv3d_grad_params(g_out, 1, ws.dec1b.out.data(), B, ws.patch, grads->get("out.w").data(),
                                       grads->get("out.b").data());
        detail::conv3d_grad_input(g_out, 1, ws.patch, params_.get("out.w").data(), B, g_d2.data());

        // decoder blocks
        std::vector<double> g_d1(static_cast<size_t>(B) * static_cast<size_t>(n));
        detail::block_backward(params_, "dec1b", g_d2.data(), ws.dec1b, ws.emb, grads, g_emb.data(), g_d1.data());
        std::vector<double> g_cat(static_cast<size_t>(3 * B) * static_cast<size_t>(n));
        detail::block_backward(params_, "dec1a", g_d1.data(), ws.dec1a, ws.emb, grads, g_emb.data(), g_cat.data());

        // split cat -> up + skip
        std::vector<double> g_bt(static_cast<size_t>(2 * B) * static_cast<size_t>(nh));
        detail::upsample2_grad(g_cat.data(), 2 * B, ws.patch, g_bt.data());
        const double* g_skip_part = g_cat.data() + static_cast<int64_t>(2 * B) * n;
        if (g_bottleneck) std::copy(g_bt.begin(), g_bt.end(), g_bottleneck);
        if (g_skip) std::copy(g_skip_part, g_skip_part + static_cast<int64_t>(B) * n, g_skip);
        if (!grads) {
            return;  // frozen decoder: adapter only needs the two injection grads
        }

        // bottleneck residual: g flows into the block and directly to enc2b
        std::vector<double> g_b2(static_cast<size_t>(2 * B) * static_cast<size_t>(nh));
        detail::block_backward(params_, "bott", g_bt.data(), ws.bott, ws.emb, grads, g_emb.data(), g_b2.data());
        for (size_t i = 0; i < g_b2.size(); ++i) g_b2[i] += g_bt[i];

        std::vector<double> g_b1(static_cast<size_t>(2 * B) * static_cast<size_t>(nh));
        detail::block_backward(params_, "enc2b", g_b2.data(), ws.enc2b, ws.emb, grads, g_emb.data(), g_b1.data());
        std::vector<double> g_pooled(static_cast<size_t>(B) * static_cast<size_t>(nh));
        detail::block_backward(params_, "enc2a", g_b1.data(), ws.enc2a, ws.emb, grads, g_emb.data(),
                               g_pooled.data());

        std::vector<double> g_a2(static_cast<size_t>(B) * static_cast<size_t>(n));
        detail::avgpool2_grad(g_pooled.data(), B, ws.patch, g_a2.data());
        // skip connection joins here
        for (int64_t i = 0; i < static_cast<int64_t>(B) * n; ++i) g_a2[static_cast<size_t>(i)] += g_skip_part[i];

        std::vector<double> g_a1(static_cast<size_t>(B) * static_cast<size_t>(n));
        detail::block_backward(params_, "enc1b", g_a2.data(), ws.enc1b, ws.emb, grads, g_emb.data(), g_a1.data());
        detail::block_backward(params_, "enc1a", g_a1.data(), ws.enc1a, ws.emb, grads, g_emb.data(), nullptr);

        backward_embedding(ws, g_emb.data(), grads);
    }

    // Shared time-MLP backward; g_emb is the gradient on the final embedding.
    void backward_embedding(const detail::UNetCaches& ws, const double* g_emb, ParamSet* grads) const {
        if (!grads) return;
        const int E = cfg_.emb_width;
        std::vector<double> act(static_cast<size_t>(E)), g_act(static_cast<size_t>(E));
        for (int i = 0; i < E; ++i) act[static_cast<size_t>(i)] = detail::silu(ws.emb_h[static_cast<size_t>(i)]);
        detail::linear_grad(g_emb, E, act.data(), E, params_.get("time.w2").data(),
                            grads->get("time.w2").data(), grads->get("time.b2").data(), g_act.data());
        std::vector<double> g_h(static_cast<size_t>(E));
        for (int i = 0; i < E; ++i)
            g_h[static_cast<size_t>(i)] =
                g_act[static_cast<size_t>(i)] * detail::silu_grad(ws.emb_h[static_cast<size_t>(i)]);
        std::vector<double> g_e0(static_cast<size_t>(E));
        detail::linear_grad(g_h.data(), E, ws.emb_t.data(), E, params_.get("time.w1").data(),
                            grads->get("time.w1").data(), grads->get("time.b1").data(), g_e0.data());
        double* gre = grads->get("region.embed").data() + static_cast<int64_t>(ws.region) * E;
        for (int i = 0; i < E; ++i) gre[i] += g_e0[static_cast<size_t>(i)];
    }

private:
    static std::string conv_bias_name(const std::string& weight_name) {
        return weight_name.substr(0, weight_name.size() - 2) + ".b";
    }

    void register_params() {
        const int B = cfg_.base_channels, E = cfg_.emb_width;
        const int cin = cfg_.layout.input_channels();
        params_.add("time.w1", static_cast<size_t>(E) * E);
        params_.add("time.b1", static_cast<size_t>(E));
        params_.add("time.w2", static_cast<size_t>(E) * E);
        params_.add("time.b2", static_cast<size_t>(E));
        params_.add("region.embed", static_cast<size_t>(3) * E);
        auto block = [&](const std::string& name, int ci, int co) {
            params_.add(name + ".conv.w", static_cast<size_t>(co) * ci * 27);
            params_.add(name + ".conv.b", static_cast<size_t>(co));
            params_.add(name + ".gn.gamma", static_cast<size_t>(co));
            params_.add(name + ".gn.beta", static_cast<size_t>(co));
            params_.add(name + ".emb.w", static_cast<size_t>(co) * E);
            params_.add(name + ".emb.b", static_cast<size_t>(co));
        };
        block("enc1a", cin, B);
        block("enc1b", B, B);
        block("enc2a", B, 2 * B);
        block("enc2b", 2 * B, 2 * B);
        block("bott", 2 * B, 2 * B);
        block("dec1a", 3 * B, B);
        block("dec1b", B, B);
        params_.add("out.w", static_cast<size_t>(B) * 27);
        params_.add("out.b", 1);
    }

    ToyUNetConfig cfg_;
    NoiseSchedule sched_;
    ParamSet params_;
};

// Adam with bias correction; moment tensors mirror the parameter registry.
struct AdamState {
    ParamSet m, v;
    int64_t step = 0;

    explicit AdamState(const ParamSet& params) : m(params.zeros_like()), v(params.zeros_like()) {}
};

struct TrainOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int threads = 1;
};

inline void adam_update(ParamSet& params, const ParamSet& grads, AdamState& st, const TrainOptions& o) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(st.step));
    params.for_each([&](const std::string& name, std::vector<double>& p) {
        const auto& g = grads.get(name);
        auto& m = st.m.get(name);
        auto& v = st.v.get(name);
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
            p[i] -= o.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + o.eps);
        }
    });
}

struct TrainItem {
    Volume x0;
    ConditionBundle cond;
};
struct TrainBatch {
    std::vector<TrainItem> items;
};

// One step of the pre-training objective: per item draw t ~ U[1, T] and
// eps ~ N(0, I), form x_t, take the L1 noise-matching loss, and apply one Adam
// update. Per-item draws come sequentially from the caller's stream and the
// gradient reduction runs in item order, so results do not depend on the
// thread count.
inline double train_step(ToyUNet& net, const TrainBatch& batch, const NoiseSchedule& s, AdamState& adam, Rng& rng,
                         const TrainOptions& opts) {
    if (batch.items.empty()) throw std::invalid_argument("empty training batch");
    const size_t nb = batch.items.size();

    std::vector<int> ts(nb);
    std::vector<Volume> noises(nb);
    for (size_t i = 0; i < nb; ++i) {
        ts[i] = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(s.T)));
        Volume eps(batch.items[i].x0.shape);
        for (auto& v : eps.data) v = rng.normal();
        noises[i] = std::move(eps);
    }

    std::vector<ParamSet> item_grads;
    item_grads.reserve(nb);
    for (size_t i = 0; i < nb; ++i) item_grads.push_back(net.params().zeros_like());
    std::vector<double> losses(nb, 0.0);

    parallel_for(static_cast<int64_t>(nb), opts.threads, [&](int64_t i) {
        const auto& item = batch.items[static_cast<size_t>(i)];
        const Volume xt = q_sample(item.x0, ts[static_cast<size_t>(i)], noises[static_cast<size_t>(i)], s);
        losses[static_cast<size_t>(i)] = net.loss_and_gradients(xt, ts[static_cast<size_t>(i)], item.cond,
                                                                noises[static_cast<size_t>(i)],
                                                                item_grads[static_cast<size_t>(i)]);
    });

    ParamSet grads = net.params().zeros_like();
    double loss = 0.0;
    for (size_t i = 0; i < nb; ++i) {
        grads.accumulate(item_grads[i]);
        loss += losses[i];
    }
    loss /= static_cast<double>(nb);
    const double inv = 1.0 / static_cast<double>(nb);
    grads.for_each([&](const std::string&, std::vector<double>& g) {
        for (auto& x : g) x *= inv;
    });

    if (!std::isfinite(loss)) throw TrainingDivergedError("non-finite training loss");
    adam_update(net.mutable_params(), grads, adam, opts);
    return loss;
}

}  // namespace voldiff
