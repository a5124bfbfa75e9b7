#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "voldiff/posenc.hpp"
#include "voldiff/rng.hpp"

using namespace voldiff;
using Catch::Approx;

TEST_CASE("whole-image coordinate grid spans [-1, 1] per axis", "[posenc]") {
    const Shape3 vol{16, 16, 16};
    const Shape3 patch{8, 8, 8};
    const CoordGrid g = coord_grid_for_window(vol, whole_volume_record(vol), patch);

    CHECK(g.x.front() == Approx(-1.0));
    CHECK(g.y.front() == Approx(-1.0));
    CHECK(g.z.front() == Approx(-1.0));
    CHECK(g.x.back() == Approx(1.0));
    CHECK(g.y.back() == Approx(1.0));
    CHECK(g.z.back() == Approx(1.0));
    for (double v : g.x) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("centered 1-voxel patch sits at the origin", "[posenc]") {
    const Shape3 vol{9, 9, 9};
    const CropRecord rec{{4, 4, 4}, {4, 4, 4}, false, false, 2};
    const CoordGrid g = coord_grid_for_window(vol, rec, {1, 1, 1});
    CHECK(g.x[0] == Approx(0.0).margin(1e-15));
    CHECK(g.y[0] == Approx(0.0).margin(1e-15));
    CHECK(g.z[0] == Approx(0.0).margin(1e-15));
}

TEST_CASE("corner crop coordinates follow 2*i/(extent-1) - 1", "[posenc]") {
    const Shape3 vol{64, 64, 64};
    const CropRecord rec{{0, 0, 0}, {15, 15, 15}, false, false, 2};
    const CoordGrid g = coord_grid_for_window(vol, rec, {16, 16, 16});
    CHECK(g.x.front() == Approx(-1.0));
    // x channel of the last voxel in the crop: index 15 in a width-64 volume
    CHECK(g.x.back() == Approx(-1.0 + 2.0 * 15.0 / 63.0));
}

TEST_CASE("crop records outside the volume are rejected", "[posenc]") {
    const Shape3 vol{8, 8, 8};
    CHECK_THROWS_AS(coord_grid_for_window(vol, CropRecord{{0, 0, 0}, {8, 7, 7}, false, false, 2}, {8, 8, 8}),
                    std::out_of_range);
    CHECK_THROWS_AS(coord_grid_for_window(vol, CropRecord{{-1, 0, 0}, {6, 7, 7}, false, false, 2}, {8, 8, 8}),
                    std::out_of_range);
}

TEST_CASE("multi-level grids agree where they overlap", "[posenc]") {
    // A voxel seen by both the whole-image grid and a crop grid must carry the
    // same coordinate up to one voxel's normalized width.
    const Shape3 vol{32, 32, 32};
    const Shape3 patch{8, 8, 8};
    const CoordGrid whole = coord_grid_for_window(vol, whole_volume_record(vol), patch);

    const CropRecord rec{{8, 8, 8}, {15, 15, 15}, false, false, 2};
    const CoordGrid cropg = coord_grid_for_window(vol, rec, patch);

    const double tol = 2.0 / 31.0;  // one voxel in normalized units
    // whole-image patch voxel j covers global coord j*31/7; find crop voxels near it
    for (int64_t j = 0; j < 8; ++j) {
        const double global = static_cast<double>(j) * 31.0 / 7.0;
        const int64_t inside = static_cast<int64_t>(std::lround(global)) - 8;
        if (inside < 0 || inside > 7) continue;
        const double from_whole = whole.x[static_cast<size_t>(j)];
        const double from_crop = cropg.x[static_cast<size_t>(inside)];
        CHECK(std::abs(from_whole - from_crop) <= tol + 1e-12);
    }
}

TEST_CASE("fourier_encode lays out sin/cos pairs per coordinate", "[posenc]") {
    CoordGrid g;
    g.shape = {1, 1, 2};
    g.x = {0.0, 1.0};
    g.y = {0.5, 0.0};
    g.z = {0.0, 0.0};
    const int L = 2;
    const PositionEmbedding pe = fourier_encode(g, L);
    REQUIRE(pe.channel_count() == 12);
    const size_t n = 2;
    auto chan = [&](int c) { return &pe.channels[static_cast<size_t>(c) * n]; };

    // p = 0: sin channels 0, cos channels 1
    CHECK(chan(0)[0] == Approx(0.0).margin(1e-15));  // x sin k=0
    CHECK(chan(1)[0] == Approx(1.0));                // x cos k=0
    // p = 1, k=0: sin(pi) = 0, cos(pi) = -1
    CHECK(chan(0)[1] == Approx(0.0).margin(1e-12));
    CHECK(chan(1)[1] == Approx(-1.0));
    // y: p = 0.5, k=1: 2*pi*0.5 = pi
    CHECK(chan(4 + 2)[0] == Approx(0.0).margin(1e-12));  // y sin k=1
    CHECK(chan(4 + 3)[0] == Approx(-1.0));               // y cos k=1

    CHECK_THROWS_AS(fourier_encode(g, 0), std::invalid_argument);
}

TEST_CASE("fourier_encode is elementwise", "[posenc]") {
    Rng rng(17);
    CoordGrid g;
    g.shape = {2, 2, 2};
    for (int i = 0; i < 8; ++i) {
        g.x.push_back(rng.uniform() * 2 - 1);
        g.y.push_back(rng.uniform() * 2 - 1);
        g.z.push_back(rng.uniform() * 2 - 1);
    }
    const PositionEmbedding pe = fourier_encode(g, 3);

    // permute voxels and re-encode: outputs permute identically
    std::vector<size_t> perm{3, 1, 4, 0, 7, 2, 6, 5};
    CoordGrid gp = g;
    for (size_t i = 0; i < 8; ++i) {
        gp.x[i] = g.x[perm[i]];
        gp.y[i] = g.y[perm[i]];
        gp.z[i] = g.z[perm[i]];
    }
    const PositionEmbedding pep = fourier_encode(gp, 3);
    for (int c = 0; c < pe.channel_count(); ++c)
        for (size_t i = 0; i < 8; ++i)
            CHECK(pep.channels[static_cast<size_t>(c) * 8 + i] == pe.channels[static_cast<size_t>(c) * 8 + perm[i]]);

    for (double v : pe.channels) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}
