// voldiff: command-line surface for the volumetric diffusion toolkit.
// Subcommands: phantom, train, finetune, sample, denoise, sr, inpaint,
// anomaly, eval, slice. Every command takes --config plus --seed/--out/--threads
// overrides, echoes its effective configuration into the output directory, and
// is bitwise reproducible from (config, seed).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "voldiff/voldiff.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace voldiff;

namespace {

struct RunContext {
    ordered_json config;
    fs::path out;
    uint64_t seed = 0;
    int threads = 1;
};

json section(const ordered_json& config, const std::string& name) {
    if (!config.contains(name)) throw std::invalid_argument("config is missing the \"" + name + "\" section");
    return config.at(name);
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

Shape3 shape_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("shape must be a [D,H,W] array");
    return {j.at(0).get<int64_t>(), j.at(1).get<int64_t>(), j.at(2).get<int64_t>()};
}

NoiseSchedule schedule_from(const ordered_json& config) {
    const int T = config.contains("schedule") ? get_or(config.at("schedule"), "T", 1000) : 1000;
    return cosine_schedule(T);
}

ToyUNetConfig model_config_from(const ordered_json& config) {
    ToyUNetConfig cfg;
    if (config.contains("model")) {
        const json& m = config.at("model");
        cfg.layout.anatomy_classes = get_or(m, "anatomy_classes", 6);
        cfg.layout.posenc_l = get_or(m, "posenc_l", 6);
        cfg.base_channels = get_or(m, "base_channels", 8);
        cfg.emb_width = get_or(m, "emb_width", 32);
    }
    if (config.contains("schedule")) cfg.schedule_T = get_or(config.at("schedule"), "T", 1000);
    return cfg;
}

struct Tiling {
    Shape3 window{16, 16, 16};
    Index3 stride{8, 8, 8};
};

Tiling tiling_from(const ordered_json& config, const Shape3& volume) {
    Tiling t;
    if (config.contains("tiling")) {
        const json& j = config.at("tiling");
        const int64_t w = get_or<int64_t>(j, "window", 16);
        const int64_t s = get_or<int64_t>(j, "stride", std::max<int64_t>(1, w / 2));
        t.window = {w, w, w};
        t.stride = {s, s, s};
    }
    t.window = {std::min(t.window.d, volume.d), std::min(t.window.h, volume.h), std::min(t.window.w, volume.w)};
    t.stride = {std::min(t.stride.z, t.window.d), std::min(t.stride.y, t.window.h),
                std::min(t.stride.x, t.window.w)};
    return t;
}

AnatomyMask anatomy_from_volume(const Volume& v, int num_classes) {
    AnatomyMask m(v.shape, num_classes);
    for (size_t i = 0; i < v.data.size(); ++i) {
        const int32_t label = static_cast<int32_t>(std::llround(v.data[i]));
        if (label < 0 || label >= num_classes)
            throw std::invalid_argument("anatomy label outside the configured class range");
        m.labels[i] = label;
    }
    return m;
}

// Window-conditioned bundle factory over a fixed volume-scale context.
CondFactory make_cond_factory(const Shape3& volume_shape, RegionClass region, AnatomyMask anatomy, int L,
                              std::optional<Volume> target = std::nullopt) {
    auto anatomy_ptr = std::make_shared<AnatomyMask>(std::move(anatomy));
    auto target_ptr = target ? std::make_shared<Volume>(std::move(*target)) : nullptr;
    return [=](const WindowPlacement& pl) {
        ConditionBundle b = make_bundle(region, anatomy_for_record(*anatomy_ptr, pl.record, pl.window),
                                        volume_shape, pl.record, pl.window, L);
        if (target_ptr) b.target = crop(*target_ptr, pl.origin, pl.window);
        return b;
    };
}

void echo_config(const RunContext& ctx, const std::string& command) {
    fs::create_directories(ctx.out);
    ordered_json echo = ctx.config;
    echo["command"] = command;
    echo["seed"] = ctx.seed;
    echo["threads"] = ctx.threads;
    std::ofstream f(ctx.out / "config_echo.json");
    f << echo.dump(2) << '\n';
}

struct DatasetCase {
    std::string id;
    RegionClass region = RegionClass::HaN;
    bool lesion = false;
    fs::path dir;
};

std::vector<DatasetCase> load_manifest(const fs::path& dataset_dir, const std::string& split) {
    std::ifstream f(dataset_dir / "manifest.json");
    if (!f) throw std::invalid_argument("cannot open dataset manifest in " + dataset_dir.string());
    json manifest = json::parse(f);
    std::set<std::string> wanted;
    if (split != "all")
        for (const auto& id : manifest.at("splits").at(split)) wanted.insert(id.get<std::string>());

    std::vector<DatasetCase> cases;
    for (const auto& c : manifest.at("cases")) {
        const std::string id = c.at("id").get<std::string>();
        if (split != "all" && !wanted.count(id)) continue;
        cases.push_back({id, region_from_name(c.at("region").get<std::string>()),
                         get_or(c, "lesion", false), dataset_dir / id});
    }
    if (cases.empty()) throw std::invalid_argument("dataset split \"" + split + "\" is empty");
    return cases;
}

struct LoadedCase {
    DatasetCase meta;
    Volume image;
    AnatomyMask anatomy;
    Volume lesion;
};

LoadedCase load_case(const DatasetCase& c, int num_classes) {
    return LoadedCase{c, read_vvol((c.dir / "image.vvol").string()),
                      anatomy_from_volume(read_vvol((c.dir / "anatomy.vvol").string()), num_classes),
                      read_vvol((c.dir / "lesion.vvol").string())};
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_phantom(const RunContext& ctx) {
    const json p = section(ctx.config, "phantom");
    PhantomRecipe recipe;
    recipe.shape = p.contains("shape") ? shape_from(p.at("shape")) : Shape3{32, 32, 32};
    recipe.num_classes = get_or(p, "num_classes", 6);
    recipe.texture_amplitude = get_or(p, "texture_amplitude", 0.04);
    recipe.lesion_probability = get_or(p, "lesion_probability", 0.0);
    const int count = get_or(p, "count", 20);

    echo_config(ctx, "phantom");
    build_dataset(count, recipe, ctx.seed, ctx.out.string());
    std::cout << "wrote " << count << " cases to " << ctx.out.string() << "\n";
    return 0;
}

TrainBatch draw_batch(const std::vector<LoadedCase>& cases, const Shape3& patch, int L, int batch, Rng& rng) {
    TrainBatch b;
    for (int i = 0; i < batch; ++i) {
        const auto& c = cases[rng.uniform_int(cases.size())];
        auto [x0, rec] = multi_level_sample(c.image, patch, rng);
        ConditionBundle cond = make_bundle(c.meta.region, anatomy_for_record(c.anatomy, rec, patch),
                                           c.image.shape, rec, patch, L);
        b.items.push_back({std::move(x0), std::move(cond)});
    }
    return b;
}

int cmd_train(const RunContext& ctx) {
    const json t = section(ctx.config, "train");
    const NoiseSchedule s = schedule_from(ctx.config);
    const ToyUNetConfig cfg = model_config_from(ctx.config);
    const int steps = get_or(t, "steps", 2000);
    const int batch = get_or(t, "batch", 2) * get_or(t, "grad_accum", 1);
    const int64_t patch_extent = get_or<int64_t>(t, "patch", 32);
    const Shape3 patch{patch_extent, patch_extent, patch_extent};
    TrainOptions opts;
    opts.lr = get_or(t, "lr", 1e-4);
    opts.threads = ctx.threads;

    const auto manifest = load_manifest(get_or<std::string>(t, "dataset", "dataset"), "train");
    std::vector<LoadedCase> cases;
    cases.reserve(manifest.size());
    for (const auto& c : manifest) cases.push_back(load_case(c, cfg.layout.anatomy_classes));

    echo_config(ctx, "train");
    ToyUNet net(cfg);
    Rng rng(ctx.seed);
    net.init_params(rng);
    AdamState adam(net.params());

    ordered_json log = ordered_json::array();
    for (int step = 0; step < steps; ++step) {
        const TrainBatch b = draw_batch(cases, patch, cfg.layout.posenc_l, batch, rng);
        const double loss = train_step(net, b, s, adam, rng, opts);
        if (step % 50 == 0 || step + 1 == steps) {
            log.push_back({{"step", step}, {"loss", loss}});
            std::cout << "step " << step << " loss " << loss << "\n";
        }
    }

    save_checkpoint((ctx.out / get_or<std::string>(t, "checkpoint", "model.vdck")).string(), net, s);
    std::ofstream f(ctx.out / "train_log.json");
    f << log.dump(2) << '\n';
    return 0;
}

int cmd_finetune(const RunContext& ctx) {
    const json t = section(ctx.config, "finetune");
    const LoadedCheckpoint base_ck = load_checkpoint(get_or<std::string>(t, "base_checkpoint", "model.vdck"));
    const NoiseSchedule s = base_ck.schedule;
    const ToyUNetConfig cfg = base_ck.config;
    const int steps = get_or(t, "steps", 500);
    const int batch = get_or(t, "batch", 2) * get_or(t, "grad_accum", 1);
    const int64_t patch_extent = get_or<int64_t>(t, "patch", 32);
    const Shape3 patch{patch_extent, patch_extent, patch_extent};
    const std::string target_kind = get_or<std::string>(t, "target", "lesion");
    const int sf = get_or(t, "sf", 5);
    TrainOptions opts;
    opts.lr = get_or(t, "lr", 1e-4);
    opts.threads = ctx.threads;

    const auto manifest = load_manifest(get_or<std::string>(t, "dataset", "dataset"), "train");
    std::vector<LoadedCase> cases;
    for (const auto& c : manifest) cases.push_back(load_case(c, cfg.layout.anatomy_classes));
    if (target_kind != "lesion" && target_kind != "lr")
        throw std::invalid_argument("finetune target must be \"lesion\" or \"lr\"");
    if (target_kind == "lr" && patch.d % sf != 0)
        throw std::invalid_argument("patch depth must be divisible by sf for lr targets");

    echo_config(ctx, "finetune");
    Rng rng(ctx.seed);
    ControlAdapter adapter(make_unet(base_ck), rng);
    AdamState adam(adapter.adapter_params());

    ordered_json log = ordered_json::array();
    for (int step = 0; step < steps; ++step) {
        TrainBatch b;
        for (int i = 0; i < batch; ++i) {
            const auto& c = cases[rng.uniform_int(cases.size())];
            auto [x0, rec] = multi_level_sample(c.image, patch, rng);
            ConditionBundle cond = make_bundle(c.meta.region, anatomy_for_record(c.anatomy, rec, patch),
                                               c.image.shape, rec, patch, cfg.layout.posenc_l);
            if (target_kind == "lesion") {
                cond.target = mask_for_record(c.lesion, rec, patch);
            } else {
                DegradationOps ops;
                ops.sf = sf;
                cond.target = ops.apply_h_up(ops.apply_h(x0));
            }
            b.items.push_back({std::move(x0), std::move(cond)});
        }
        const double loss = finetune_step(adapter, b, s, adam, rng, opts);
        if (step % 50 == 0 || step + 1 == steps) {
            log.push_back({{"step", step}, {"loss", loss}});
            std::cout << "step " << step << " loss " << loss << "\n";
        }
    }

    save_adapter_checkpoint((ctx.out / get_or<std::string>(t, "checkpoint", "adapter.vdck")).string(), adapter, s);
    std::ofstream f(ctx.out / "finetune_log.json");
    f << log.dump(2) << '\n';
    return 0;
}

struct LoadedDenoiser {
    std::unique_ptr<Denoiser> d;
    ToyUNetConfig cfg;
    NoiseSchedule schedule;
    bool is_adapter = false;
};

LoadedDenoiser load_denoiser(const std::string& path) {
    const LoadedCheckpoint ck = load_checkpoint(path);
    LoadedDenoiser out;
    out.cfg = ck.config;
    out.schedule = ck.schedule;
    if (ck.kind == "control_adapter") {
        out.is_adapter = true;
        out.d = std::make_unique<ControlAdapter>(load_adapter_checkpoint(path));
    } else {
        out.d = std::make_unique<ToyUNet>(make_unet(ck));
    }
    return out;
}

int cmd_sample(const RunContext& ctx, bool no_tiling) {
    const json sc = section(ctx.config, "sample");
    const LoadedDenoiser den = load_denoiser(get_or<std::string>(sc, "checkpoint", "model.vdck"));
    const NoiseSchedule& s = den.schedule;
    const Shape3 shape = sc.contains("shape") ? shape_from(sc.at("shape")) : Shape3{32, 32, 32};
    const RegionClass region = region_from_name(get_or<std::string>(sc, "region", "HaN"));
    const int nfe = std::min(get_or(sc, "nfe", 100), s.T);
    const int L = den.cfg.layout.posenc_l;

    AnatomyMask anatomy(shape, den.cfg.layout.anatomy_classes);
    if (sc.contains("anatomy"))
        anatomy = anatomy_from_volume(read_vvol(sc.at("anatomy").get<std::string>()),
                                      den.cfg.layout.anatomy_classes);
    std::optional<Volume> target;
    if (den.is_adapter) {
        if (!sc.contains("target"))
            throw std::invalid_argument("sampling with an adapter checkpoint needs sample.target");
        target = read_vvol(sc.at("target").get<std::string>());
        if (target->shape != shape) throw std::invalid_argument("sample.target shape mismatch");
    }

    echo_config(ctx, "sample");
    Rng rng(ctx.seed);
    const auto steps = skip_subsequence(s, nfe, s.T);
    const SampleOptions sopts = get_or(sc, "clip_x0", true) ? SampleOptions::clipped() : SampleOptions{};
    Volume out_vol;
    if (no_tiling) {
        ConditionBundle cond = make_bundle(region, anatomy, shape, whole_volume_record(shape), shape, L);
        if (target) cond.target = *target;
        out_vol = generate(*den.d, cond, shape, s, rng, steps, sopts);
    } else {
        const Tiling tiling = tiling_from(ctx.config, shape);
        const WindowPlan plan = plan_windows(shape, tiling.window, tiling.stride);
        const CondFactory factory = make_cond_factory(shape, region, anatomy, L, target);
        out_vol = tiled_generate(*den.d, factory, shape, s, rng, plan, steps, ctx.threads, sopts);
    }
    out_vol.region = region;
    out_vol.window = region_window(region);
    write_vvol(out_vol, (ctx.out / "sample.vvol").string());
    std::cout << "wrote " << (ctx.out / "sample.vvol").string() << "\n";
    return 0;
}

double finite_psnr(const Volume& a, const Volume& b) {
    const double p = psnr(a, b, 2.0);
    return std::isinf(p) ? 999.0 : p;
}

int cmd_denoise(const RunContext& ctx) {
    const json dc = section(ctx.config, "denoise");
    const LoadedDenoiser den = load_denoiser(get_or<std::string>(dc, "checkpoint", "model.vdck"));
    const NoiseSchedule& s = den.schedule;
    DegradationOps ops;
    ops.sf = 1;
    ops.sigma_n = get_or(dc, "sigma_n", 0.15);
    ops.lambda = get_or(dc, "lambda", 10.0);
    RestoreOptions ropts;
    ropts.nfe = get_or(dc, "nfe", 50);
    ropts.zeta = get_or(dc, "zeta", 0.3);
    const int L = den.cfg.layout.posenc_l;

    echo_config(ctx, "denoise");

    if (dc.contains("input")) {
        const Volume noisy = read_vvol(dc.at("input").get<std::string>());
        AnatomyMask anatomy(noisy.shape, den.cfg.layout.anatomy_classes);
        if (dc.contains("anatomy"))
            anatomy = anatomy_from_volume(read_vvol(dc.at("anatomy").get<std::string>()),
                                          den.cfg.layout.anatomy_classes);
        const Tiling tiling = tiling_from(ctx.config, noisy.shape);
        const WindowPlan plan = plan_windows(noisy.shape, tiling.window, tiling.stride);
        const CondFactory factory = make_cond_factory(noisy.shape, noisy.region, anatomy, L);
        Rng rng(ctx.seed);
        const Volume restored = tiled_restore(*den.d, factory, noisy, ops, s, ropts, rng, plan, ctx.threads);
        write_vvol(restored, (ctx.out / "denoised.vvol").string());
        if (dc.contains("reference")) {
            const Volume ref = read_vvol(dc.at("reference").get<std::string>());
            std::cout << "psnr noisy " << finite_psnr(noisy, ref) << " restored "
                      << finite_psnr(restored, ref) << "\n";
        }
        return 0;
    }

    // dataset mode: simulate low dose on a manifest split and report the gain
    const auto manifest = load_manifest(get_or<std::string>(dc, "dataset", "dataset"),
                                        get_or<std::string>(dc, "split", "test"));
    ordered_json records = ordered_json::array();
    double gain_sum = 0.0;
    for (size_t i = 0; i < manifest.size(); ++i) {
        const LoadedCase c = load_case(manifest[i], den.cfg.layout.anatomy_classes);
        Rng noise_rng = Rng(ctx.seed).stream(1000 + i);
        const Volume noisy = simulate_low_dose(c.image, ops.sigma_n, noise_rng);
        const Tiling tiling = tiling_from(ctx.config, noisy.shape);
        const WindowPlan plan = plan_windows(noisy.shape, tiling.window, tiling.stride);
        const CondFactory factory = make_cond_factory(noisy.shape, c.meta.region, c.anatomy, L);
        Rng run_rng = Rng(ctx.seed).stream(2000 + i);
        const Volume restored = tiled_restore(*den.d, factory, noisy, ops, s, ropts, run_rng, plan, ctx.threads);
        const double p_noisy = finite_psnr(noisy, c.image);
        const double p_rest = finite_psnr(restored, c.image);
        gain_sum += p_rest - p_noisy;
        write_vvol(restored, (ctx.out / (c.meta.id + "_denoised.vvol")).string());
        records.push_back({{"metric", "psnr_gain"},
                           {"value", p_rest - p_noisy},
                           {"case_id", c.meta.id},
                           {"params", {{"sigma_n", ops.sigma_n}, {"lambda", ops.lambda}}}});
    }
    std::ofstream f(ctx.out / "metrics.json");
    f << records.dump(2) << '\n';
    std::cout << "mean PSNR gain: " << gain_sum / static_cast<double>(manifest.size()) << " dB\n";
    return 0;
}

int cmd_sr(const RunContext& ctx) {
    const json sc = section(ctx.config, "sr");
    const LoadedDenoiser den = load_denoiser(get_or<std::string>(sc, "checkpoint", "model.vdck"));
    const NoiseSchedule& s = den.schedule;
    DegradationOps ops;
    ops.sf = get_or(sc, "sf", 5);
    ops.sigma_n = get_or(sc, "sigma_n", 1.0);
    ops.lambda = get_or(sc, "lambda", 1.0);
    RestoreOptions ropts;
    ropts.nfe = get_or(sc, "nfe", 100);
    ropts.zeta = get_or(sc, "zeta", 0.3);
    const int L = den.cfg.layout.posenc_l;

    echo_config(ctx, "sr");

    auto run_one = [&](const Volume& lr, RegionClass region, const AnatomyMask& hr_anatomy, Rng& rrng) {
        const Shape3 hr{lr.shape.d * ops.sf, lr.shape.h, lr.shape.w};
        const Tiling tiling = tiling_from(ctx.config, hr);
        const WindowPlan plan = plan_windows(hr, tiling.window, tiling.stride);
        std::optional<Volume> target;
        if (den.is_adapter) target = ops.apply_h_up(lr);
        const CondFactory factory = make_cond_factory(hr, region, hr_anatomy, L, target);
        return tiled_restore(*den.d, factory, lr, ops, s, ropts, rrng, plan, ctx.threads);
    };

    if (sc.contains("input")) {
        const Volume lr = read_vvol(sc.at("input").get<std::string>());
        const Shape3 hr{lr.shape.d * ops.sf, lr.shape.h, lr.shape.w};
        AnatomyMask anatomy(hr, den.cfg.layout.anatomy_classes);
        if (sc.contains("anatomy"))
            anatomy = anatomy_from_volume(read_vvol(sc.at("anatomy").get<std::string>()),
                                          den.cfg.layout.anatomy_classes);
        Rng rng(ctx.seed);
        const Volume out_vol = run_one(lr, lr.region, anatomy, rng);
        write_vvol(out_vol, (ctx.out / "sr.vvol").string());
        std::cout << "wrote " << (ctx.out / "sr.vvol").string() << "\n";
        return 0;
    }

    const auto manifest = load_manifest(get_or<std::string>(sc, "dataset", "dataset"),
                                        get_or<std::string>(sc, "split", "test"));
    ordered_json records = ordered_json::array();
    double psnr_sum = 0.0;
    for (size_t i = 0; i < manifest.size(); ++i) {
        const LoadedCase c = load_case(manifest[i], den.cfg.layout.anatomy_classes);
        // crop depth to a multiple of sf so the forward model applies exactly
        const int64_t d_keep = (c.image.shape.d / ops.sf) * ops.sf;
        if (d_keep < ops.sf) throw std::invalid_argument("volume too shallow for the scale factor");
        const Volume hr_ref = crop(c.image, {0, 0, 0}, {d_keep, c.image.shape.h, c.image.shape.w});
        AnatomyMask anatomy(hr_ref.shape, den.cfg.layout.anatomy_classes);
        for (int64_t z = 0; z < d_keep; ++z)
            for (int64_t y = 0; y < hr_ref.shape.h; ++y)
                for (int64_t x = 0; x < hr_ref.shape.w; ++x) anatomy.at(z, y, x) = c.anatomy.at(z, y, x);
        const Volume lr = ops.apply_h(hr_ref);
        Rng run_rng = Rng(ctx.seed).stream(3000 + i);
        const Volume hr = run_one(lr, c.meta.region, anatomy, run_rng);
        const double p = finite_psnr(hr, hr_ref);
        psnr_sum += p;
        write_vvol(hr, (ctx.out / (c.meta.id + "_sr.vvol")).string());
        records.push_back(
            {{"metric", "psnr"}, {"value", p}, {"case_id", c.meta.id}, {"params", {{"sf", ops.sf}}}});
    }
    std::ofstream f(ctx.out / "metrics.json");
    f << records.dump(2) << '\n';
    std::cout << "mean SR PSNR: " << psnr_sum / static_cast<double>(manifest.size()) << " dB\n";
    return 0;
}

int cmd_inpaint(const RunContext& ctx) {
    const json ic = section(ctx.config, "inpaint");
    const LoadedDenoiser den = load_denoiser(get_or<std::string>(ic, "checkpoint", "adapter.vdck"));
    const NoiseSchedule& s = den.schedule;
    const Volume image = read_vvol(ic.at("input").get<std::string>());
    const Volume mask = read_vvol(ic.at("mask").get<std::string>());
    const int nfe = std::min(get_or(ic, "nfe", s.T), s.T);
    const int L = den.cfg.layout.posenc_l;

    AnatomyMask anatomy(image.shape, den.cfg.layout.anatomy_classes);
    if (ic.contains("anatomy"))
        anatomy = anatomy_from_volume(read_vvol(ic.at("anatomy").get<std::string>()),
                                      den.cfg.layout.anatomy_classes);

    echo_config(ctx, "inpaint");
    Rng rng(ctx.seed);
    const auto steps = skip_subsequence(s, nfe, s.T);
    const Tiling tiling = tiling_from(ctx.config, image.shape);
    const WindowPlan plan = plan_windows(image.shape, tiling.window, tiling.stride);
    std::optional<Volume> target;
    if (den.is_adapter) target = mask;
    const SampleOptions sopts = get_or(ic, "clip_x0", true) ? SampleOptions::clipped() : SampleOptions{};
    const CondFactory factory = make_cond_factory(image.shape, image.region, anatomy, L, target);
    const Volume out_vol =
        inpaint_volume_tiled(*den.d, factory, image, mask, s, rng, plan, steps, ctx.threads, sopts);
    write_vvol(out_vol, (ctx.out / "inpainted.vvol").string());
    std::cout << "wrote " << (ctx.out / "inpainted.vvol").string() << "\n";
    return 0;
}

int cmd_anomaly(const RunContext& ctx) {
    const json ac = section(ctx.config, "anomaly");
    const LoadedDenoiser den = load_denoiser(get_or<std::string>(ac, "checkpoint", "model.vdck"));
    const NoiseSchedule& s = den.schedule;
    const Volume image = read_vvol(ac.at("input").get<std::string>());
    const int t_fixed = get_or(ac, "t_fixed", default_anomaly_t(s));
    const double threshold = get_or(ac, "threshold", 0.3);
    const AnomalyScore kind =
        get_or<std::string>(ac, "score", "max") == "mean" ? AnomalyScore::Mean : AnomalyScore::Max;
    const int L = den.cfg.layout.posenc_l;

    AnatomyMask anatomy(image.shape, den.cfg.layout.anatomy_classes);
    if (ac.contains("anatomy"))
        anatomy = anatomy_from_volume(read_vvol(ac.at("anatomy").get<std::string>()),
                                      den.cfg.layout.anatomy_classes);

    Volume roi(image.shape, 1.0);
    if (ac.contains("roi")) {
        roi = read_vvol(ac.at("roi").get<std::string>());
        for (auto& v : roi.data) v = v != 0.0 ? 1.0 : 0.0;
    } else if (ac.contains("roi_label")) {
        const int label = ac.at("roi_label").get<int>();
        for (size_t i = 0; i < roi.data.size(); ++i) roi.data[i] = anatomy.labels[i] == label ? 1.0 : 0.0;
    }

    echo_config(ctx, "anomaly");
    Rng rng(ctx.seed);
    const Tiling tiling = tiling_from(ctx.config, image.shape);
    const WindowPlan plan = plan_windows(image.shape, tiling.window, tiling.stride);
    const CondFactory factory = make_cond_factory(image.shape, image.region, anatomy, L);
    const AnomalyResult r =
        detect_tiled(*den.d, image, roi, factory, t_fixed, threshold, s, rng, plan, ctx.threads, kind);

    write_vvol(r.map, (ctx.out / "anomaly_map.vvol").string());
    write_vvol(r.abs_map, (ctx.out / "anomaly_abs.vvol").string());
    write_vvol(r.mask, (ctx.out / "anomaly_mask.vvol").string());
    ordered_json result{{"score", r.score},
                        {"threshold", threshold},
                        {"t_fixed", t_fixed},
                        {"score_kind", kind == AnomalyScore::Mean ? "mean" : "max"}};
    std::ofstream f(ctx.out / "anomaly.json");
    f << result.dump(2) << '\n';
    std::cout << "anomaly score " << r.score << "\n";
    return 0;
}

Volume normalized_abs_map(const Volume& abs_map) {
    double hi = 0.0;
    for (double v : abs_map.data) hi = std::max(hi, v);
    Volume out = abs_map;
    if (hi > 0.0)
        for (auto& v : out.data) v /= hi;
    return out;
}

int cmd_eval(const RunContext& ctx) {
    const json ec = section(ctx.config, "eval");
    echo_config(ctx, "eval");
    ordered_json records = ordered_json::array();

    if (ec.contains("pairs")) {
        for (const auto& pj : ec.at("pairs")) {
            const std::string case_id = get_or<std::string>(pj, "case_id", "case");
            const Volume a = read_vvol(pj.at("a").get<std::string>());
            const Volume b = read_vvol(pj.at("b").get<std::string>());
            const double range = get_or(pj, "data_range", 2.0);
            for (const auto& mj : pj.at("metrics")) {
                const std::string metric = mj.get<std::string>();
                double value = 0.0;
                if (metric == "psnr")
                    value = finite_psnr(a, b);
                else if (metric == "ssim")
                    value = ssim3d(a, b, range);
                else if (metric == "ms_ssim")
                    value = ms_ssim3d(a, b, range);
                else if (metric == "dice")
                    value = dice(a, b);
                else
                    throw std::invalid_argument("unknown metric: " + metric);
                records.push_back({{"metric", metric},
                                   {"value", value},
                                   {"case_id", case_id},
                                   {"params", {{"data_range", range}}}});
            }
        }
    }

    if (ec.contains("anomaly")) {
        const json aj = ec.at("anomaly");
        const double fpr_limit = get_or(aj, "fpr_limit", 0.3);
        const double dice_thr = get_or(aj, "dice_threshold", 0.5);
        std::vector<Volume> maps, gts;
        std::vector<double> image_scores;
        std::vector<int> image_labels;
        std::vector<double> pixel_scores;
        std::vector<int> pixel_labels;
        double dice_sum = 0.0;
        int dice_count = 0;

        for (const auto& cj : aj.at("cases")) {
            const std::string case_id = get_or<std::string>(cj, "case_id", "case");
            const Volume abs_map = read_vvol(cj.at("abs_map").get<std::string>());
            const Volume gt = read_vvol(cj.at("gt").get<std::string>());
            bool has_lesion = false;
            for (double v : gt.data)
                if (v != 0.0) has_lesion = true;
            double max_score = 0.0;
            for (double v : abs_map.data) max_score = std::max(max_score, v);
            image_scores.push_back(max_score);
            image_labels.push_back(has_lesion ? 1 : 0);
            for (size_t i = 0; i < abs_map.data.size(); ++i) {
                pixel_scores.push_back(abs_map.data[i]);
                pixel_labels.push_back(gt.data[i] != 0.0 ? 1 : 0);
            }
            if (has_lesion) {
                maps.push_back(abs_map);
                gts.push_back(gt);
                // threshold-0.5 Dice on the per-volume normalized map
                Volume pred = normalized_abs_map(abs_map);
                for (auto& v : pred.data) v = v >= dice_thr ? 1.0 : 0.0;
                const double dc = dice(pred, gt);
                dice_sum += dc;
                ++dice_count;
                records.push_back({{"metric", "dice"},
                                   {"value", dc},
                                   {"case_id", case_id},
                                   {"params", {{"threshold", dice_thr}, {"normalized", true}}}});
            }
        }
        records.push_back({{"metric", "image_auroc"},
                           {"value", auroc(image_scores, image_labels)},
                           {"case_id", "all"},
                           {"params", {{"score", "max"}}}});
        records.push_back({{"metric", "pixel_auroc"},
                           {"value", auroc(pixel_scores, pixel_labels)},
                           {"case_id", "all"},
                           {"params", json::object()}});
        if (!maps.empty())
            records.push_back({{"metric", "pro"},
                               {"value", pro(maps, gts, fpr_limit)},
                               {"case_id", "all"},
                               {"params", {{"fpr_limit", fpr_limit}}}});
        if (dice_count > 0)
            records.push_back({{"metric", "mean_dice"},
                               {"value", dice_sum / dice_count},
                               {"case_id", "all"},
                               {"params", {{"threshold", dice_thr}, {"normalized", true}}}});
    }

    std::ofstream f(ctx.out / "metrics.json");
    f << records.dump(2) << '\n';
    for (const auto& r : records)
        if (r.at("case_id") == "all")
            std::cout << r.at("metric").get<std::string>() << " " << r.at("value").get<double>() << "\n";
    std::cout << "wrote " << records.size() << " metric records\n";
    return 0;
}

int cmd_slice(const RunContext& ctx) {
    const json sc = section(ctx.config, "slice");
    const Volume v = read_vvol(sc.at("input").get<std::string>());
    const std::string axis = get_or<std::string>(sc, "axis", "z");
    const int64_t index = get_or<int64_t>(sc, "index", 0);
    const double lo = sc.contains("range") ? sc.at("range").at(0).get<double>() : -1.0;
    const double hi = sc.contains("range") ? sc.at("range").at(1).get<double>() : 1.0;
    if (!(hi > lo)) throw std::invalid_argument("slice range must satisfy hi > lo");

    int64_t width = 0, height = 0;
    if (axis == "z") {
        if (index < 0 || index >= v.shape.d) throw std::invalid_argument("slice index out of range");
        height = v.shape.h;
        width = v.shape.w;
    } else if (axis == "y") {
        if (index < 0 || index >= v.shape.h) throw std::invalid_argument("slice index out of range");
        height = v.shape.d;
        width = v.shape.w;
    } else if (axis == "x") {
        if (index < 0 || index >= v.shape.w) throw std::invalid_argument("slice index out of range");
        height = v.shape.d;
        width = v.shape.h;
    } else {
        throw std::invalid_argument("slice axis must be one of z, y, x");
    }

    echo_config(ctx, "slice");
    std::vector<unsigned char> pixels(static_cast<size_t>(width * height));
    size_t k = 0;
    for (int64_t r = 0; r < height; ++r)
        for (int64_t c = 0; c < width; ++c, ++k) {
            double val;
            if (axis == "z")
                val = v.at(index, r, c);
            else if (axis == "y")
                val = v.at(r, index, c);
            else
                val = v.at(r, c, index);
            const double norm = std::clamp((val - lo) / (hi - lo), 0.0, 1.0);
            pixels[k] = static_cast<unsigned char>(std::lround(norm * 255.0));
        }

    const std::string name = get_or<std::string>(sc, "output", "slice.pgm");
    std::ofstream out(ctx.out / name, std::ios::binary);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    std::cout << "wrote " << (ctx.out / name).string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voldiff: volumetric diffusion inference toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir = "out";
    int64_t seed_flag = -1;
    int threads_flag = 0;
    bool no_tiling = false;

    app.add_option("--config", config_path, "JSON configuration file")->required();
    app.add_option("--seed", seed_flag, "override the config seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads_flag, "worker threads (falls back to VOLDIFF_THREADS)");

    auto* sample_cmd = app.add_subcommand("sample", "whole-volume synthesis");
    sample_cmd->add_flag("--no-tiling", no_tiling, "bypass the sliding-window path");
    const char* names[] = {"phantom", "train", "finetune", "denoise", "sr", "inpaint", "anomaly", "eval", "slice"};
    const char* descs[] = {"build a synthetic dataset",
                           "pre-train the toy denoiser",
                           "fine-tune a control adapter",
                           "plug-and-play denoising",
                           "z-axis super-resolution",
                           "lesion inpainting",
                           "reconstruction-based anomaly detection",
                           "metrics over volumes and manifests",
                           "emit a PGM cross-section"};
    for (int i = 0; i < 9; ++i) app.add_subcommand(names[i], descs[i]);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") return app.exit(e);
        app.exit(e);
        return 2;
    }

    RunContext ctx;
    try {
        std::ifstream f(config_path);
        if (!f) throw std::invalid_argument("cannot open config file: " + config_path);
        ctx.config = ordered_json::parse(f);

        ctx.out = out_dir;
        ctx.seed = seed_flag >= 0 ? static_cast<uint64_t>(seed_flag) : get_or<uint64_t>(ctx.config, "seed", 0);
        if (threads_flag > 0) {
            ctx.threads = threads_flag;
        } else if (const char* env = std::getenv("VOLDIFF_THREADS"); env && std::atoi(env) > 0) {
            ctx.threads = std::atoi(env);
        } else {
            ctx.threads = get_or(ctx.config, "threads", 1);
        }

        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "phantom") return cmd_phantom(ctx);
        if (cmd == "train") return cmd_train(ctx);
        if (cmd == "finetune") return cmd_finetune(ctx);
        if (cmd == "sample") return cmd_sample(ctx, no_tiling);
        if (cmd == "denoise") return cmd_denoise(ctx);
        if (cmd == "sr") return cmd_sr(ctx);
        if (cmd == "inpaint") return cmd_inpaint(ctx);
        if (cmd == "anomaly") return cmd_anomaly(ctx);
        if (cmd == "eval") return cmd_eval(ctx);
        if (cmd == "slice") return cmd_slice(ctx);
        std::cerr << "unknown command\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid arguments: " << e.what() << "\n";
        return 2;
    } catch (const std::out_of_range& e) {
        std::cerr << "invalid arguments: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "file format error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
