#pragma once

#include <string>
#include <vector>

#include "voldiff/checkpoint.hpp"
#include "voldiff/toy_unet.hpp"

namespace voldiff {

namespace detail {

struct AdapterCaches {
    UNetCaches base;
    BlockCache c1a, c1b, c2a, c2b, cbott;
    std::vector<double> target_in;                    // 1-channel target condition
    std::vector<double> t1_out, t1_act, t2_out;       // target encoder
    std::vector<double> sum1a;                        // copy enc1a output + target features
    std::vector<double> cpooled, cbt;                 // copy bottleneck path
    std::vector<double> skip_adj, bt_adj;             // injected decoder inputs
};

}  // namespace detail

// ControlNet-style fine-tuning adapter: the pre-trained network stays locked, a
// trainable copy of its encoder sees the same input plus features of the
// task-specific target condition, and the copy's features enter the locked
// decoder through zero-initialized 1x1x1 projections, so a fresh adapter
// reproduces the base output exactly.
class ControlAdapter : public Denoiser {
public:
    explicit ControlAdapter(ToyUNet base, Rng& rng) : base_(std::move(base)) {
        register_adapter_params();
        init_adapter(rng);
    }

    // Reconstruction from checkpointed parameter sets.
    ControlAdapter(ToyUNet base, const ParamSet& adapter_params) : base_(std::move(base)) {
        register_adapter_params();
        adapter_params.for_each(
            [&](const std::string& name, const std::vector<double>& v) { adapter_.get(name) = v; });
    }

    const ToyUNet& base() const { return base_; }
    const ParamSet& adapter_params() const { return adapter_; }
    ParamSet& mutable_adapter_params() { return adapter_; }

    Volume predict_noise(const Volume& x_t, int t, const ConditionBundle& cond) const override {
        detail::AdapterCaches ws;
        return forward(x_t, t, cond, ws);
    }

    double loss_and_gradients(const Volume& x_t, int t, const ConditionBundle& cond, const Volume& eps_target,
                              ParamSet& grads) const {
        detail::AdapterCaches ws;
        const Volume eps_hat = forward(x_t, t, cond, ws);
        const int64_t n = eps_hat.voxels();
        double loss = 0.0;
        std::vector<double> g_out(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            const double r = eps_hat.data[static_cast<size_t>(i)] - eps_target.data[static_cast<size_t>(i)];
            loss += std::abs(r);
            g_out[static_cast<size_t>(i)] = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) / static_cast<double>(n);
        }
        backward(ws, g_out.data(), grads);
        return loss / static_cast<double>(n);
    }

    Volume forward(const Volume& x_t, int t, const ConditionBundle& cond, detail::AdapterCaches& ws) const {
        if (!cond.target) throw std::invalid_argument("control adapter requires the target condition");
        if (cond.target->shape != x_t.shape) throw ShapeError("target condition does not match the patch");
        const int B = base_.config().base_channels;
        const Shape3 sp = x_t.shape;
        const int64_t n = sp.voxels();

        base_.encode_input(x_t, cond, ws.base);
        base_.compute_embedding(t, ws.base);
        base_.run_encoder(base_.params(), ws.base);

        // target encoder: conv3 -> silu -> conv3 on the 1-channel condition
        ws.target_in = cond.target->data;
        ws.t1_out.resize(static_cast<size_t>(B) * static_cast<size_t>(n));
        detail::conv3d(ws.target_in.data(), 1, sp, adapter_.get("target.c1.w").data(),
                       adapter_.get("target.c1.b").data(), B, ws.t1_out.data());
        ws.t1_act.resize(ws.t1_out.size());
        for (size_t i = 0; i < ws.t1_out.size(); ++i) ws.t1_act[i] = detail::silu(ws.t1_out[i]);
        ws.t2_out.resize(ws.t1_out.size());
        detail::conv3d(ws.t1_act.data(), B, sp, adapter_.get("target.c2.w").data(),
                       adapter_.get("target.c2.b").data(), B, ws.t2_out.data());

        // trainable encoder copy with target features added after the first block
        detail::block_forward(adapter_, "copy.enc1a", ws.base.input.data(), base_.config().layout.input_channels(),
                              B, sp, ws.base.emb, ws.c1a);
        ws.sum1a.resize(ws.c1a.out.size());
        for (size_t i = 0; i < ws.sum1a.size(); ++i) ws.sum1a[i] = ws.c1a.out[i] + ws.t2_out[i];
        detail::block_forward(adapter_, "copy.enc1b", ws.sum1a.data(), B, B, sp, ws.base.emb, ws.c1b);
        const Shape3 half = ws.base.half;
        ws.cpooled.resize(static_cast<size_t>(B) * static_cast<size_t>(half.voxels()));
        detail::avgpool2(ws.c1b.out.data(), B, sp, ws.cpooled.data());
        detail::block_forward(adapter_, "copy.enc2a", ws.cpooled.data(), B, 2 * B, half, ws.base.emb, ws.c2a);
        detail::block_forward(adapter_, "copy.enc2b", ws.c2a.out.data(), 2 * B, 2 * B, half, ws.base.emb, ws.c2b);
        detail::block_forward(adapter_, "copy.bott", ws.c2b.out.data(), 2 * B, 2 * B, half, ws.base.emb, ws.cbott);
        ws.cbt.resize(ws.cbott.out.size());
        for (size_t i = 0; i < ws.cbt.size(); ++i) ws.cbt[i] = ws.c2b.out[i] + ws.cbott.out[i];

        // zero-initialized link projections into the locked decoder
        ws.skip_adj.resize(static_cast<size_t>(B) * static_cast<size_t>(n));
        detail::conv1x1(ws.c1b.out.data(), B, n, adapter_.get("link.skip.w").data(),
                        adapter_.get("link.skip.b").data(), B, ws.skip_adj.data());
        for (int64_t i = 0; i < static_cast<int64_t>(B) * n; ++i)
            ws.skip_adj[static_cast<size_t>(i)] += ws.base.enc1b.out[static_cast<size_t>(i)];
        const int64_t nh = half.voxels();
        ws.bt_adj.resize(static_cast<size_t>(2 * B) * static_cast<size_t>(nh));
        detail::conv1x1(ws.cbt.data(), 2 * B, nh, adapter_.get("link.bott.w").data(),
                        adapter_.get("link.bott.b").data(), 2 * B, ws.bt_adj.data());
        for (int64_t i = 0; i < static_cast<int64_t>(2 * B) * nh; ++i)
            ws.bt_adj[static_cast<size_t>(i)] += ws.base.bt[static_cast<size_t>(i)];

        base_.run_decoder(ws.base, ws.bt_adj.data(), ws.skip_adj.data());
        Volume out = x_t.like();
        detail::conv3d(ws.base.dec1b.out.data(), B, sp, base_.params().get("out.w").data(),
                       base_.params().get("out.b").data(), 1, out.data.data());
        const double sc = base_.shortcut_coefficient(t);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += sc * x_t.data[i];
        return out;
    }

    // Gradients flow only into the copy, the target encoder, and the links; the
    // locked base receives none.
    void backward(const detail::AdapterCaches& ws, const double* g_out, ParamSet& grads) const {
        const int B = base_.config().base_channels;
        const Shape3 sp = ws.base.patch;
        const Shape3 half = ws.base.half;
        const int64_t n = sp.voxels(), nh = half.voxels();

        std::vector<double> g_bt_adj(static_cast<size_t>(2 * B) * static_cast<size_t>(nh));
        std::vector<double> g_skip_adj(static_cast<size_t>(B) * static_cast<size_t>(n));
        base_.backward(ws.base, g_out, nullptr, g_bt_adj.data(), g_skip_adj.data());

        // link projections
        std::vector<double> g_cbt(g_bt_adj.size());
        detail::conv1x1_grad(g_bt_adj.data(), 2 * B, ws.cbt.data(), 2 * B, nh, adapter_.get("link.bott.w").data(),
                             grads.get("link.bott.w").data(), grads.get("link.bott.b").data(), g_cbt.data());
        std::vector<double> g_c1b(g_skip_adj.size());
        detail::conv1x1_grad(g_skip_adj.data(), B, ws.c1b.out.data(), B, n, adapter_.get("link.skip.w").data(),
                             grads.get("link.skip.w").data(), grads.get("link.skip.b").data(), g_c1b.data());

        // copy encoder, mirroring the base encoder backward
        std::vector<double> g_c2b(g_cbt.size());
        detail::block_backward(adapter_, "copy.bott", g_cbt.data(), ws.cbott, ws.base.emb, &grads, nullptr,
                               g_c2b.data());
        for (size_t i = 0; i < g_c2b.size(); ++i) g_c2b[i] += g_cbt[i];
        std::vector<double> g_c2a(g_c2b.size());
        detail::block_backward(adapter_, "copy.enc2b", g_c2b.data(), ws.c2b, ws.base.emb, &grads, nullptr,
                               g_c2a.data());
        std::vector<double> g_pooled(static_cast<size_t>(B) * static_cast<size_t>(nh));
        detail::block_backward(adapter_, "copy.enc2a", g_c2a.data(), ws.c2a, ws.base.emb, &grads, nullptr,
                               g_pooled.data());
        std::vector<double> g_c1b_total(static_cast<size_t>(B) * static_cast<size_t>(n));
        detail::avgpool2_grad(g_pooled.data(), B, sp, g_c1b_total.data());
        for (size_t i = 0; i < g_c1b_total.size(); ++i) g_c1b_total[i] += g_c1b[i];

        std::vector<double> g_sum1a(static_cast<size_t>(B) * static_cast<size_t>(n));
        detail::block_backward(adapter_, "copy.enc1b", g_c1b_total.data(), ws.c1b, ws.base.emb, &grads, nullptr,
                               g_sum1a.data());
        // g_sum1a feeds both the first copy block and the target encoder
        detail::block_backward(adapter_, "copy.enc1a", g_sum1a.data(), ws.c1a, ws.base.emb, &grads, nullptr,
                               nullptr);
        std::vector<double> g_t1_act(static_cast<size_t>(B) * static_cast<size_t>(n));
        detail::conv3d_grad_params(g_sum1a.data(), B, ws.t1_act.data(), B, sp, grads.get("target.c2.w").data(),
                                   grads.get("target.c2.b").data());
        detail::conv3d_grad_input(g_sum1a.data(), B, sp, adapter_.get("target.c2.w").data(), B, g_t1_act.data());
        for (size_t i = 0; i < g_t1_act.size(); ++i) g_t1_act[i] *= detail::silu_grad(ws.t1_out[i]);
        detail::conv3d_grad_params(g_t1_act.data(), B, ws.target_in.data(), 1, sp,
                                   grads.get("target.c1.w").data(), grads.get("target.c1.b").data());
    }

private:
    void register_adapter_params() {
        const int B = base_.config().base_channels, E = base_.config().emb_width;
        const int cin = base_.config().layout.input_channels();
        auto block = [&](const std::string& name, int ci, int co) {
            adapter_.add(name + ".conv.w", static_cast<size_t>(co) * ci * 27);
            adapter_.add(name + ".conv.b", static_cast<size_t>(co));
            adapter_.add(name + ".gn.gamma", static_cast<size_t>(co));
            adapter_.add(name + ".gn.beta", static_cast<size_t>(co));
            adapter_.add(name + ".emb.w", static_cast<size_t>(co) * E);
            adapter_.add(name + ".emb.b", static_cast<size_t>(co));
        };
        block("copy.enc1a", cin, B);
        block("copy.enc1b", B, B);
        block("copy.enc2a", B, 2 * B);
        block("copy.enc2b", 2 * B, 2 * B);
        block("copy.bott", 2 * B, 2 * B);
        adapter_.add("target.c1.w", static_cast<size_t>(B) * 1 * 27);
        adapter_.add("target.c1.b", static_cast<size_t>(B));
        adapter_.add("target.c2.w", static_cast<size_t>(B) * B * 27);
        adapter_.add("target.c2.b", static_cast<size_t>(B));
        adapter_.add("link.skip.w", static_cast<size_t>(B) * B);
        adapter_.add("link.skip.b", static_cast<size_t>(B));
        adapter_.add("link.bott.w", static_cast<size_t>(2 * B) * (2 * B));
        adapter_.add("link.bott.b", static_cast<size_t>(2 * B));
    }

    // Copy blocks clone the locked encoder; links start at exactly zero.
    void init_adapter(Rng& rng) {
        adapter_.for_each([&](const std::string& name, std::vector<double>& v) {
            if (name.starts_with("copy.")) {
                v = base_.params().get(name.substr(5));
            } else if (name.starts_with("link.")) {
                std::fill(v.begin(), v.end(), 0.0);
            } else if (name.ends_with(".b")) {
                std::fill(v.begin(), v.end(), 0.0);
            } else {
                const double fan_in = name == "target.c1.w" ? 27.0 : static_cast<double>(base_.config().base_channels) * 27.0;
                const double sc = std::sqrt(2.0 / fan_in);
                for (auto& x : v) x = sc * rng.normal();
            }
        });
    }

    ToyUNet base_;
    ParamSet adapter_;
};

// One fine-tuning step of the task-conditioned objective: same noise-matching
// loss, Adam on the adapter parameters only.
inline double finetune_step(ControlAdapter& adapter, const TrainBatch& batch, const NoiseSchedule& s,
                            AdamState& adam, Rng& rng, const TrainOptions& opts) {
    if (batch.items.empty()) throw std::invalid_argument("empty fine-tuning batch");
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
    for (size_t i = 0; i < nb; ++i) item_grads.push_back(adapter.adapter_params().zeros_like());
    std::vector<double> losses(nb, 0.0);

    parallel_for(static_cast<int64_t>(nb), opts.threads, [&](int64_t i) {
        const auto& item = batch.items[static_cast<size_t>(i)];
        const Volume xt = q_sample(item.x0, ts[static_cast<size_t>(i)], noises[static_cast<size_t>(i)], s);
        losses[static_cast<size_t>(i)] = adapter.loss_and_gradients(
            xt, ts[static_cast<size_t>(i)], item.cond, noises[static_cast<size_t>(i)],
            item_grads[static_cast<size_t>(i)]);
    });

    ParamSet grads = adapter.adapter_params().zeros_like();
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

    if (!std::isfinite(loss)) throw TrainingDivergedError("non-finite fine-tuning loss");
    adam_update(adapter.mutable_adapter_params(), grads, adam, opts);
    return loss;
}

inline void save_adapter_checkpoint(const std::string& path, const ControlAdapter& adapter,
                                    const NoiseSchedule& schedule) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);

    size_t offset = 0;
    nlohmann::ordered_json header;
    header["magic"] = "VDCK1";
    header["version"] = 1;
    header["kind"] = "control_adapter";
    header["layout"] = adapter.base().config().layout.to_json();
    header["model"] = detail::model_json(adapter.base().config());
    header["schedule"] = {{"kind", "cosine"}, {"T", schedule.T}};
    nlohmann::ordered_json arrays = detail::array_table(adapter.base().params(), "base.", offset);
    for (auto& e : detail::array_table(adapter.adapter_params(), "adapter.", offset)) arrays.push_back(e);
    header["arrays"] = arrays;
    out << header.dump() << '\n';
    detail::write_param_arrays(out, adapter.base().params());
    detail::write_param_arrays(out, adapter.adapter_params());
    if (!out) throw FormatError("short write: " + path);
}

inline ControlAdapter load_adapter_checkpoint(const std::string& path,
                                              const std::optional<ChannelLayout>& expected_layout = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    const nlohmann::json header = detail::open_checkpoint(in, path);
    if (header.value("kind", "") != std::string("control_adapter"))
        throw FormatError("not a control-adapter checkpoint: " + path);

    ToyUNetConfig cfg = detail::config_from_header(header);
    if (expected_layout && !(cfg.layout == *expected_layout))
        throw FormatError("checkpoint layout does not match the requested configuration: " + path);
    const NoiseSchedule schedule = cosine_schedule(header.at("schedule").at("T").get<int>());
    (void)schedule;

    const std::streampos data_start = in.tellg();
    ToyUNet base(cfg);
    detail::read_param_arrays(in, data_start, header.at("arrays"), "base.", base.mutable_params(), path);

    Rng dummy(0);
    ControlAdapter proto(std::move(base), dummy);
    ParamSet adapter_params = proto.adapter_params().zeros_like();
    detail::read_param_arrays(in, data_start, header.at("arrays"), "adapter.", adapter_params, path);
    return ControlAdapter(proto.base(), adapter_params);
}

}  // namespace voldiff
