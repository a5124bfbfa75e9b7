#include <catch2/catch_amalgamated.hpp>

#include "voldiff/control.hpp"
#include "voldiff/denoiser.hpp"
#include "voldiff/inpaint.hpp"
#include "voldiff/phantom.hpp"

using namespace voldiff;
using Catch::Approx;

namespace {

ConditionBundle empty_bundle(Shape3 patch) {
    return make_bundle(RegionClass::HaN, AnatomyMask(patch, 2), patch, whole_volume_record(patch), patch, 1);
}

}  // namespace

TEST_CASE("repaint_combine fuses by the binary mask", "[inpaint]") {
    const Shape3 sp{1, 1, 2};
    Volume known(sp), unknown(sp), mask(sp);
    known.data = {5.0, 5.0};
    unknown.data = {7.0, 7.0};

    mask.data = {0.0, 0.0};
    CHECK(repaint_combine(known, unknown, mask).data == std::vector<double>{5.0, 5.0});
    mask.data = {1.0, 1.0};
    CHECK(repaint_combine(known, unknown, mask).data == std::vector<double>{7.0, 7.0});
    mask.data = {0.0, 1.0};
    CHECK(repaint_combine(known, unknown, mask).data == std::vector<double>{5.0, 7.0});

    mask.data = {0.5, 0.0};
    CHECK_THROWS_AS(repaint_combine(known, unknown, mask), std::invalid_argument);
    CHECK_THROWS_AS(repaint_combine(known, Volume({1, 1, 3}), Volume({1, 1, 3})), ShapeError);
}

TEST_CASE("repaint_combine is linear in both branches", "[inpaint]") {
    Rng rng(5);
    const Shape3 sp{2, 2, 2};
    Volume mask(sp);
    for (auto& m : mask.data) m = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Volume a(sp), b(sp), c(sp), d(sp);
    for (auto& v : a.data) v = rng.normal();
    for (auto& v : b.data) v = rng.normal();
    for (auto& v : c.data) v = rng.normal();
    for (auto& v : d.data) v = rng.normal();

    // combine(a+c, b+d) = combine(a, b) + combine(c, d)
    Volume ac = a, bd = b;
    for (size_t i = 0; i < 8; ++i) {
        ac.data[i] += c.data[i];
        bd.data[i] += d.data[i];
    }
    const Volume lhs = repaint_combine(ac, bd, mask);
    const Volume r1 = repaint_combine(a, b, mask);
    const Volume r2 = repaint_combine(c, d, mask);
    for (size_t i = 0; i < 8; ++i) CHECK(lhs.data[i] == Approx(r1.data[i] + r2.data[i]).margin(1e-12));
}

TEST_CASE("inpaint_volume preserves out-of-mask voxels bitwise", "[inpaint]") {
    const int T = 40;
    const NoiseSchedule s = cosine_schedule(T);
    const AnalyticGaussianDenoiser oracle(0.1, 0.05, s);
    const Shape3 sp{4, 4, 4};
    const ConditionBundle cond = empty_bundle(sp);

    Rng data(6);
    Volume orig(sp);
    for (auto& v : orig.data) v = 0.1 + 0.2 * data.normal();

    SECTION("empty mask returns the original bitwise") {
        Volume mask(sp, 0.0);
        Rng rng(7);
        const Volume out = inpaint_volume(oracle, cond, orig, mask, s, rng);
        CHECK(out.data == orig.data);
    }

    SECTION("arbitrary masks never alter out-of-mask voxels") {
        for (uint64_t seed = 0; seed < 10; ++seed) {
            Rng mrng(seed);
            Volume mask(sp);
            for (auto& m : mask.data) m = mrng.uniform() < 0.3 ? 1.0 : 0.0;
            Rng rng(100 + seed);
            const Volume out = inpaint_volume(oracle, cond, orig, mask, s, rng);
            for (size_t i = 0; i < out.data.size(); ++i)
                if (mask.data[i] == 0.0) CHECK(out.data[i] == orig.data[i]);
        }
    }

    SECTION("repeated inpainting is idempotent outside the mask") {
        Volume mask(sp, 0.0);
        mask.at(1, 1, 1) = 1.0;
        mask.at(2, 2, 2) = 1.0;
        Rng r1(8), r2(9);
        const Volume once = inpaint_volume(oracle, cond, orig, mask, s, r1);
        const Volume twice = inpaint_volume(oracle, cond, once, mask, s, r2);
        for (size_t i = 0; i < twice.data.size(); ++i)
            if (mask.data[i] == 0.0) CHECK(twice.data[i] == orig.data[i]);
    }

    SECTION("skip lists work and stay deterministic per seed") {
        Volume mask(sp, 0.0);
        mask.at(0, 0, 0) = 1.0;
        const auto steps = skip_subsequence(s, 10, T);
        Rng a(10), b(10);
        const Volume o1 = inpaint_volume(oracle, cond, orig, mask, s, a, steps);
        const Volume o2 = inpaint_volume(oracle, cond, orig, mask, s, b, steps);
        CHECK(o1.data == o2.data);
    }
}

TEST_CASE("fine-tuned adapter moves inpainted regions toward lesion statistics", "[inpaint][slowish]") {
    // Pre-train a tiny net on healthy phantoms, fine-tune an adapter on
    // lesioned ones with the lesion mask as the target condition, then inpaint
    // a healthy phantom: the in-mask mean must land closer to the lesion
    // statistics than to the untouched host intensity.
    const int T = 200;
    const NoiseSchedule s = cosine_schedule(T);
    ToyUNetConfig cfg;
    cfg.layout = ChannelLayout{4, 2};
    cfg.base_channels = 4;
    cfg.emb_width = 16;
    cfg.schedule_T = T;
    const Shape3 patch{8, 8, 8};
    const int L = cfg.layout.posenc_l;
    const double host_intensity = 0.2, lesion_offset = 0.5;

    auto make_spec = [&](uint64_t seed, bool with_lesion) {
        PhantomSpec spec;
        spec.shape = patch;
        spec.region = RegionClass::HaN;
        spec.num_classes = cfg.layout.anatomy_classes;
        spec.texture_amplitude = 0.01;
        spec.seed = seed;
        spec.components = {{1, {3.5, 3.5, 3.5}, {2.8, 2.8, 2.8}, host_intensity}};
        if (with_lesion) spec.lesion = LesionSpec{{3.5, 3.5, 3.5}, 1.6, lesion_offset, 1};
        return spec;
    };
    auto bundle_for = [&](const Phantom& ph, std::optional<Volume> target) {
        ConditionBundle b = make_bundle(RegionClass::HaN, ph.anatomy, patch, whole_volume_record(patch), patch, L);
        b.target = std::move(target);
        return b;
    };

    ToyUNet base(cfg);
    Rng init(101);
    base.init_params(init);
    {
        AdamState adam(base.params());
        TrainOptions opts;
        opts.lr = 3e-3;
        Rng rng(102);
        for (int step = 0; step < 250; ++step) {
            TrainBatch batch;
            for (int i = 0; i < 2; ++i) {
                const Phantom ph = generate_phantom(make_spec(rng.raw(), false));
                batch.items.push_back({ph.image, bundle_for(ph, std::nullopt)});
            }
            train_step(base, batch, s, adam, rng, opts);
        }
    }

    Rng arng(103);
    ControlAdapter adapter(std::move(base), arng);
    {
        AdamState adam(adapter.adapter_params());
        TrainOptions opts;
        opts.lr = 3e-3;
        Rng rng(104);
        for (int step = 0; step < 1200; ++step) {
            TrainBatch batch;
            for (int i = 0; i < 2; ++i) {
                const Phantom ph = generate_phantom(make_spec(rng.raw(), true));
                batch.items.push_back({ph.image, bundle_for(ph, ph.lesion_mask)});
            }
            finetune_step(adapter, batch, s, adam, rng, opts);
        }
    }

    const PhantomSpec healthy_spec = make_spec(999, true);  // lesion geometry defines the mask
    PhantomSpec clean_spec = healthy_spec;
    clean_spec.lesion.reset();
    const Phantom clean = generate_phantom(clean_spec);
    const Volume mask = generate_phantom(healthy_spec).lesion_mask;

    const auto steps = skip_subsequence(s, 50, T);
    double in_mean = 0.0;
    int64_t n_in = 0;
    for (uint64_t run = 0; run < 3; ++run) {
        Rng rng(105 + run);
        const Volume inpainted = inpaint_volume(adapter, bundle_for(clean, mask), clean.image, mask, s, rng,
                                                steps, SampleOptions::clipped());
        for (size_t i = 0; i < mask.data.size(); ++i)
            if (mask.data[i] == 1.0) {
                in_mean += inpainted.data[i];
                ++n_in;
            }
    }
    REQUIRE(n_in > 0);
    in_mean /= static_cast<double>(n_in);

    const double lesion_mean = host_intensity + lesion_offset;
    INFO("inpainted in-mask mean " << in_mean << " lesion " << lesion_mean << " host " << host_intensity);
    CHECK(std::abs(in_mean - lesion_mean) < std::abs(in_mean - host_intensity));
}

TEST_CASE("inpainted region adopts the generator's statistics", "[inpaint]") {
    // With the analytic prior centred well away from the original values, the
    // generated in-mask voxels must move toward the prior mean.
    const int T = 60;
    const NoiseSchedule s = cosine_schedule(T);
    const double prior_mean = 0.6;
    const AnalyticGaussianDenoiser oracle(prior_mean, 0.01, s);
    const Shape3 sp{4, 4, 4};
    const ConditionBundle cond = empty_bundle(sp);

    Volume orig(sp, -0.4);
    Volume mask(sp, 0.0);
    for (int64_t z = 1; z <= 2; ++z)
        for (int64_t y = 1; y <= 2; ++y)
            for (int64_t x = 1; x <= 2; ++x) mask.at(z, y, x) = 1.0;

    Rng rng(11);
    const Volume out = inpaint_volume(oracle, cond, orig, mask, s, rng);
    double in_mean = 0.0;
    int64_t n_in = 0;
    for (size_t i = 0; i < out.data.size(); ++i)
        if (mask.data[i] == 1.0) {
            in_mean += out.data[i];
            ++n_in;
        }
    in_mean /= static_cast<double>(n_in);
    CHECK(std::abs(in_mean - prior_mean) < std::abs(in_mean - (-0.4)));
}
