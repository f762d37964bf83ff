#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "gf/backbone.h"
#include "gf/kernels.h"
#include "gf/rng.h"

using gf::BackboneConfig;
using gf::ParamStore;
using gf::Tensor;

namespace {

Tensor random_image(int h, int w, gf::Rng& rng) {
    Tensor img({3, h, w});
    for (auto& v : img.values()) v = rng.uniform(0.0f, 1.0f);
    return img;
}

BackboneConfig toy_config() { return BackboneConfig{}; }

bool stores_equal(const ParamStore& a, const ParamStore& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, tensor] : a) {
        auto it = b.find(name);
        if (it == b.end() || it->second.shape() != tensor.shape()) return false;
        if (std::memcmp(it->second.data(), tensor.data(),
                        static_cast<size_t>(tensor.numel()) * 4) != 0) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_SUITE_BEGIN("backbone");

TEST_CASE("build_backbone is deterministic in (config, seed)") {
    const auto config = toy_config();
    ParamStore a = gf::build_backbone(config, 42);
    ParamStore b = gf::build_backbone(config, 42);
    CHECK(stores_equal(a, b));

    ParamStore c = gf::build_backbone(config, 43);
    CHECK_FALSE(stores_equal(a, c));
}

TEST_CASE("config validation") {
    BackboneConfig bad = toy_config();
    bad.stage_channels[2] = 0;
    CHECK_THROWS(gf::build_backbone(bad, 1));

    BackboneConfig wrong_strides = toy_config();
    wrong_strides.stage_strides = {2, 2, 2, 2, 2};  // product over 32
    CHECK_THROWS(gf::build_backbone(wrong_strides, 1));

    BackboneConfig short_blocks = toy_config();
    short_blocks.blocks_per_stage = {1, 1};
    CHECK_THROWS(gf::build_backbone(short_blocks, 1));
}

TEST_CASE("toy config forward shapes") {
    const auto config = toy_config();
    ParamStore params = gf::build_backbone(config, 7);
    gf::Rng rng(1);

    Tensor img = random_image(64, 64, rng);
    Tensor c4 = gf::forward_to_c4(img, params, config);
    CHECK(c4.shape() == std::vector<int>{config.c4_channels(), 4, 4});

    Tensor c5_std = gf::forward_c5(c4, params, config, BackboneConfig::C5Mode::standard);
    CHECK(c5_std.shape() == std::vector<int>{config.c5_channels(), 2, 2});

    Tensor c5_dil = gf::forward_c5(c4, params, config, BackboneConfig::C5Mode::dilated);
    CHECK(c5_dil.shape() == std::vector<int>{config.c5_channels(), 4, 4});

    CHECK_THROWS(gf::forward_to_c4(random_image(16, 64, rng), params, config));
}

TEST_CASE("c4 extents are ceil(H/16) x ceil(W/16) at 600x1000") {
    const auto config = toy_config();
    ParamStore params = gf::build_backbone(config, 7);
    gf::Rng rng(2);
    Tensor img = random_image(600, 1000, rng);
    Tensor c4 = gf::forward_to_c4(img, params, config);
    CHECK(c4.dim(0) == config.c4_channels());
    CHECK(c4.dim(1) == 38);
    CHECK(c4.dim(2) == 63);

    Tensor c5 = gf::forward_c5(c4, params, config, BackboneConfig::C5Mode::standard);
    CHECK(c5.dim(1) == 19);
    CHECK(c5.dim(2) == 32);
}

TEST_CASE("grid feature counts reproduce the published ladder") {
    CHECK(gf::grid_count(448, 448) == 196);
    CHECK(gf::grid_count(448, 746) == 336);
    CHECK(gf::grid_count(600, 1000) == 608);
    CHECK(gf::grid_count(800, 1333) == 1050);
}

TEST_CASE("grid_features at 448x448 gives a 14x14 map") {
    const auto config = toy_config();
    ParamStore params = gf::build_backbone(config, 9);
    gf::Rng rng(3);
    Tensor grid = gf::grid_features(random_image(448, 448, rng), params, config);
    CHECK(grid.shape() == std::vector<int>{config.c5_channels(), 14, 14});
}

TEST_CASE("dilated C5 subsampled at even indices equals standard C5") {
    auto config = toy_config();
    int failures = 0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        ParamStore params = gf::build_backbone(config, 100 + seed);
        gf::Rng rng(seed);
        const int h = 2 * rng.uniform_int(2, 5);
        const int w = 2 * rng.uniform_int(2, 5);
        Tensor c4({config.c4_channels(), h, w});
        for (auto& v : c4.values()) v = rng.uniform(-1.0f, 1.0f);

        Tensor std_out = gf::forward_c5(c4, params, config, BackboneConfig::C5Mode::standard);
        Tensor dil_out = gf::forward_c5(c4, params, config, BackboneConfig::C5Mode::dilated);
        REQUIRE(dil_out.dim(1) == h);
        REQUIRE(std_out.dim(1) == h / 2);
        for (int c = 0; c < std_out.dim(0); ++c) {
            for (int i = 0; i < std_out.dim(1); ++i) {
                for (int j = 0; j < std_out.dim(2); ++j) {
                    const float a = std_out.at(c, i, j);
                    const float b = dil_out.at(c, 2 * i, 2 * j);
                    if (std::abs(a - b) > 1e-5f * std::max({1.0f, std::abs(a), std::abs(b)})) {
                        ++failures;
                    }
                }
            }
        }
    }
    CHECK(failures == 0);
}

TEST_CASE("dilated equivalence holds with multi-block C5 stages") {
    BackboneConfig config;
    config.blocks_per_stage = {1, 1, 1, 1, 3};
    ParamStore params = gf::build_backbone(config, 77);
    gf::Rng rng(5);
    Tensor c4({config.c4_channels(), 8, 10});
    for (auto& v : c4.values()) v = rng.uniform(-1.0f, 1.0f);
    Tensor std_out = gf::forward_c5(c4, params, config, BackboneConfig::C5Mode::standard);
    Tensor dil_out = gf::forward_c5(c4, params, config, BackboneConfig::C5Mode::dilated);
    for (int c = 0; c < std_out.dim(0); ++c) {
        for (int i = 0; i < std_out.dim(1); ++i) {
            for (int j = 0; j < std_out.dim(2); ++j) {
                CHECK(std_out.at(c, i, j) ==
                      doctest::Approx(dil_out.at(c, 2 * i, 2 * j)).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("composed c4+c5 equals the grid_features path bitwise") {
    const auto config = toy_config();
    ParamStore params = gf::build_backbone(config, 11);
    gf::Rng rng(6);
    Tensor img = random_image(64, 96, rng);
    Tensor c4 = gf::forward_to_c4(img, params, config);
    Tensor c5 = gf::forward_c5(c4, params, config, BackboneConfig::C5Mode::standard);
    Tensor grid = gf::grid_features(img, params, config);
    REQUIRE(c5.shape() == grid.shape());
    CHECK(std::memcmp(c5.data(), grid.data(), static_cast<size_t>(c5.numel()) * 4) == 0);
}

TEST_CASE("extraction from dilated-trained weights runs no dilated convs") {
    BackboneConfig config;
    config.c5_mode = BackboneConfig::C5Mode::dilated;
    ParamStore params = gf::build_backbone(config, 13);
    gf::Rng rng(8);
    Tensor img = random_image(64, 64, rng);

    gf::kernels::TraceScope trace;
    Tensor grid = gf::grid_features(img, params, config);
    CHECK(grid.dim(1) == 2);
    REQUIRE(!trace.entries().empty());
    for (const auto& e : trace.entries()) {
        CHECK(e.dilation == 1);
    }
}

TEST_CASE("weights save/load round-trips through GFWT") {
    const auto config = toy_config();
    ParamStore params = gf::build_backbone(config, 21);
    gf::save_weights(params, "bb.gfwt");
    ParamStore loaded = gf::load_weights("bb.gfwt");
    CHECK(stores_equal(params, loaded));
    std::filesystem::remove("bb.gfwt");
}

TEST_SUITE_END();
