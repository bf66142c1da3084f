// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "seqsplat/lift.hpp"
#include "seqsplat/util.hpp"

using namespace seqsplat;
namespace fs = std::filesystem;

namespace {

raster::Image uniform_image(int w, int h, double r, double g, double b) {
    raster::Image img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<size_t>(w) * h * 3);
    for (size_t p = 0; p < static_cast<size_t>(w) * h; ++p) {
        img.rgb[p * 3 + 0] = r;
        img.rgb[p * 3 + 1] = g;
        img.rgb[p * 3 + 2] = b;
    }
    return img;
}

// builds a WeightRender from loose records (grouped per pixel, in order)
raster::WeightRender make_weights(int w, int h, std::vector<raster::WeightRecord> recs) {
    raster::WeightRender wr;
    wr.width = w;
    wr.height = h;
    std::stable_sort(recs.begin(), recs.end(),
                     [w](const raster::WeightRecord& a, const raster::WeightRecord& b) {
                         return a.y * w + a.x < b.y * w + b.x;
                     });
    wr.records = std::move(recs);
    wr.pixel_offset.assign(static_cast<size_t>(w) * h + 1, 0);
    for (const auto& r : wr.records)
        wr.pixel_offset[static_cast<size_t>(r.y) * w + r.x + 1]++;
    for (size_t p = 1; p < wr.pixel_offset.size(); ++p)
        wr.pixel_offset[p] += wr.pixel_offset[p - 1];
    wr.transmittance.assign(static_cast<size_t>(w) * h, 1.0);
    return wr;
}

lift::FeatureMap constant_map(int w, int h, int d, double value, int view_id) {
    lift::FeatureMap m;
    m.width = w;
    m.height = h;
    m.dim = d;
    m.view_id = view_id;
    m.data.assign(static_cast<size_t>(w) * h * d, value);
    return m;
}

scene::GaussianScene tiny_scene(size_t n, uint64_t seed) {
    RngStream rng(seed, "lift-scene");
    scene::GaussianScene s;
    for (size_t i = 0; i < n; ++i) {
        scene::GaussianPrimitive g;
        g.position = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        g.scale = Eigen::Vector3d::Constant(rng.uniform(0.05, 0.25));
        g.opacity = rng.uniform(0.3, 1.0);
        g.color = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        s.primitives.push_back(g);
    }
    return s;
}

}  // namespace

TEST_CASE("procedural featureizer on a uniform gray image") {
    lift::ProceduralFeatureizer feat;
    auto map = feat.featureize(uniform_image(8, 8, 0.5, 0.5, 0.5));
    CHECK(map.dim == 16);
    for (int c = 0; c < 3; ++c)
        CHECK(map.at(3, 5, c) == 0.5);
    CHECK(map.at(0, 2, 3) == doctest::Approx(0.0));   // sin(0) at x=0
    CHECK(map.at(0, 2, 4) == doctest::Approx(1.0));   // cos(0)
    CHECK(map.at(4, 4, 7) == doctest::Approx(0.5));   // 3x3 mean
    CHECK(map.at(4, 4, 10) == doctest::Approx(0.25)); // 3x3 mean of squares

    auto map2 = feat.featureize(uniform_image(8, 8, 0.5, 0.5, 0.5));
    CHECK(map.data == map2.data);  // deterministic
}

TEST_CASE("lift_features with a single record copies the pixel feature") {
    auto s = tiny_scene(1, 1);
    raster::Camera cam;
    cam.width = 4;
    cam.height = 4;
    lift::FeatureMap map = constant_map(4, 4, 3, 0.0, 0);
    map.at(2, 1, 0) = 1.5;
    map.at(2, 1, 1) = -0.25;
    map.at(2, 1, 2) = 4.0;
    auto wr = make_weights(4, 4, {{2, 1, 0, 0.7}});
    auto bank = lift::lift_features(s, {cam}, {map}, {wr});
    CHECK(bank.at(0, 0) == doctest::Approx(1.5));
    CHECK(bank.at(0, 1) == doctest::Approx(-0.25));
    CHECK(bank.at(0, 2) == doctest::Approx(4.0));
    CHECK(bank.coverage[0] == doctest::Approx(0.7));
}

TEST_CASE("two records average as (a + 3b) / 4") {
    auto s = tiny_scene(1, 2);
    raster::Camera cam;
    cam.width = 4;
    cam.height = 4;
    lift::FeatureMap map = constant_map(4, 4, 1, 0.0, 0);
    map.at(0, 0, 0) = 2.0;   // a
    map.at(1, 0, 0) = 10.0;  // b
    auto wr = make_weights(4, 4, {{0, 0, 0, 1.0}, {1, 0, 0, 3.0}});
    auto bank = lift::lift_features(s, {cam}, {map}, {wr});
    CHECK(bank.at(0, 0) == doctest::Approx((2.0 + 3.0 * 10.0) / 4.0));
}

TEST_CASE("constant feature maps lift to the constant for covered gaussians") {
    auto s = tiny_scene(5, 3);
    auto cams = raster::default_view_ring(s, 2, 32, 32);
    std::vector<lift::FeatureMap> maps;
    std::vector<raster::WeightRender> weights;
    for (size_t v = 0; v < cams.size(); ++v) {
        auto m = constant_map(32, 32, 4, 2.75, static_cast<int>(v));
        maps.push_back(m);
        weights.push_back(raster::render_weights(s, cams[v]));
    }
    auto bank = lift::lift_features(s, cams, maps, weights);
    for (size_t i = 0; i < 5; ++i)
        if (bank.covered(i))
            for (int c = 0; c < 4; ++c)
                CHECK(bank.at(i, c) == doctest::Approx(2.75).epsilon(1e-6));
}

TEST_CASE("uncovered gaussians get the zero vector, never NaN") {
    auto s = tiny_scene(2, 4);
    raster::Camera cam;
    cam.width = 4;
    cam.height = 4;
    auto wr = make_weights(4, 4, {{0, 0, 0, 0.5}});  // gaussian 1 never appears
    auto bank = lift::lift_features(s, {cam}, {constant_map(4, 4, 2, 3.0, 0)}, {wr});
    CHECK(bank.covered(0));
    CHECK_FALSE(bank.covered(1));
    CHECK(bank.at(1, 0) == 0.0f);
    CHECK(bank.at(1, 1) == 0.0f);
}

TEST_CASE("lift_pipeline with m=1 equals lift_features over that view") {
    auto s = tiny_scene(12, 5);
    lift::ProceduralFeatureizer feat;
    lift::LiftOptions opts;
    opts.views = 1;
    opts.resolution = 48;
    auto bank = lift::lift_pipeline(s, feat, opts);

    auto cams = raster::default_view_ring(s, 1, 48, 48);
    auto img = raster::render_rgb(s, cams[0], opts.background);
    auto map = feat.featureize(img);
    map.view_id = 0;
    auto wr = raster::render_weights(s, cams[0]);
    auto direct = lift::lift_features(s, cams, {map}, {wr});
    REQUIRE(bank.data.size() == direct.data.size());
    for (size_t i = 0; i < bank.data.size(); ++i)
        CHECK(bank.data[i] == direct.data[i]);
}

TEST_CASE("cache hits return a bit-identical bank") {
    auto s = tiny_scene(10, 6);
    lift::ProceduralFeatureizer feat;
    lift::LiftOptions opts;
    opts.views = 2;
    opts.resolution = 32;
    opts.cache_dir = fs::temp_directory_path() / "seqsplat_lift_cache";
    fs::remove_all(opts.cache_dir);
    auto bank1 = lift::lift_pipeline(s, feat, opts);
    auto bank2 = lift::lift_pipeline(s, feat, opts);  // cache hit
    CHECK(bank1.data == bank2.data);
    CHECK(bank1.coverage == bank2.coverage);
    size_t files = std::distance(fs::directory_iterator(opts.cache_dir),
                                 fs::directory_iterator{});
    CHECK(files == 1);
    fs::remove_all(opts.cache_dir);
}

TEST_CASE("bank equals the brute-force triple-loop evaluation within 1e-6") {
    auto s = tiny_scene(60, 7);
    lift::ProceduralFeatureizer feat;
    auto cams = raster::default_view_ring(s, 4, 64, 64);
    std::vector<lift::FeatureMap> maps;
    std::vector<raster::WeightRender> weights;
    for (size_t v = 0; v < cams.size(); ++v) {
        auto img = raster::render_rgb(s, cams[v], Eigen::Vector3d::Zero());
        auto m = feat.featureize(img);
        m.view_id = static_cast<int>(v);
        maps.push_back(std::move(m));
        weights.push_back(raster::render_weights(s, cams[v]));
    }
    auto bank = lift::lift_features(s, cams, maps, weights);

    // brute force: plain loops, naive accumulation
    size_t n = s.size();
    int d = 16;
    std::vector<double> num(n * d, 0.0), den(n, 0.0);
    for (size_t v = 0; v < cams.size(); ++v)
        for (const auto& rec : weights[v].records) {
            for (int c = 0; c < d; ++c)
                num[rec.gaussian * d + c] += rec.weight * maps[v].at(rec.x, rec.y, c);
            den[rec.gaussian] += rec.weight;
        }
    for (size_t i = 0; i < n; ++i) {
        CHECK(std::abs(bank.coverage[i] - den[i]) <=
              1e-6 * std::max(1.0, std::abs(den[i])));
        for (int c = 0; c < d; ++c) {
            double expect = den[i] > 0 ? num[i * d + c] / den[i] : 0.0;
            CHECK(std::abs(bank.at(i, c) - expect) < 1e-6);
        }
    }

    // convexity: min over contributing pixels <= f <= max, per component
    std::vector<double> lo(n * d, 1e300), hi(n * d, -1e300);
    for (size_t v = 0; v < cams.size(); ++v)
        for (const auto& rec : weights[v].records)
            for (int c = 0; c < d; ++c) {
                double f = maps[v].at(rec.x, rec.y, c);
                lo[rec.gaussian * d + c] = std::min(lo[rec.gaussian * d + c], f);
                hi[rec.gaussian * d + c] = std::max(hi[rec.gaussian * d + c], f);
            }
    for (size_t i = 0; i < n; ++i) {
        if (!bank.covered(i))
            continue;
        for (int c = 0; c < d; ++c) {
            CHECK(bank.at(i, c) >= lo[i * d + c] - 1e-9);
            CHECK(bank.at(i, c) <= hi[i * d + c] + 1e-9);
        }
    }
}

TEST_CASE("permuting view order leaves the bank unchanged") {
    auto s = tiny_scene(20, 8);
    lift::ProceduralFeatureizer feat;
    auto cams = raster::default_view_ring(s, 3, 32, 32);
    std::vector<lift::FeatureMap> maps;
    std::vector<raster::WeightRender> weights;
    for (size_t v = 0; v < cams.size(); ++v) {
        auto img = raster::render_rgb(s, cams[v], Eigen::Vector3d::Zero());
        auto m = feat.featureize(img);
        m.view_id = static_cast<int>(v);
        maps.push_back(std::move(m));
        weights.push_back(raster::render_weights(s, cams[v]));
    }
    auto bank = lift::lift_features(s, cams, maps, weights);
    // rotate the lists; canonical ordering by view_id must undo it
    std::vector<raster::Camera> cams2 = {cams[2], cams[0], cams[1]};
    std::vector<lift::FeatureMap> maps2 = {maps[2], maps[0], maps[1]};
    std::vector<raster::WeightRender> weights2 = {weights[2], weights[0], weights[1]};
    auto bank2 = lift::lift_features(s, cams2, maps2, weights2);
    CHECK(bank.data == bank2.data);
    CHECK(bank.coverage == bank2.coverage);
}

TEST_CASE("scaling all weights of a gaussian leaves its feature unchanged") {
    auto s = tiny_scene(1, 9);
    raster::Camera cam;
    cam.width = 8;
    cam.height = 8;
    RngStream rng(9, "scale-w");
    std::vector<raster::WeightRecord> recs;
    lift::FeatureMap map = constant_map(8, 8, 3, 0.0, 0);
    for (int k = 0; k < 20; ++k) {
        uint16_t x = static_cast<uint16_t>(rng.index(8));
        uint16_t y = static_cast<uint16_t>(rng.index(8));
        for (int c = 0; c < 3; ++c)
            map.at(x, y, c) = rng.uniform(-1, 1);
        recs.push_back({x, y, 0, rng.uniform(0.01, 0.9)});
    }
    auto bank = lift::lift_features(s, {cam}, {map}, {make_weights(8, 8, recs)});
    double c = 3.7;
    for (auto& r : recs)
        r.weight *= c;
    auto bank2 = lift::lift_features(s, {cam}, {map}, {make_weights(8, 8, recs)});
    for (int ch = 0; ch < 3; ++ch)
        CHECK(std::abs(bank.at(0, ch) - bank2.at(0, ch)) <
              1e-9 * std::max(1.0, static_cast<double>(std::abs(bank.at(0, ch)))));
}

TEST_CASE("coverage matches the weight dump within 1e-6") {
    auto s = tiny_scene(25, 10);
    auto cams = raster::default_view_ring(s, 2, 48, 48);
    lift::ProceduralFeatureizer feat;
    std::vector<lift::FeatureMap> maps;
    std::vector<raster::WeightRender> weights;
    auto dir = fs::temp_directory_path() / "seqsplat_lift_dump";
    fs::create_directories(dir);
    for (size_t v = 0; v < cams.size(); ++v) {
        auto img = raster::render_rgb(s, cams[v], Eigen::Vector3d::Zero());
        auto m = feat.featureize(img);
        m.view_id = static_cast<int>(v);
        maps.push_back(std::move(m));
        weights.push_back(raster::render_weights(s, cams[v]));
        raster::save_weights(weights.back(), dir / ("v" + std::to_string(v) + ".sswt"));
    }
    auto bank = lift::lift_features(s, cams, maps, weights);
    std::vector<double> dumped(s.size(), 0.0);
    for (size_t v = 0; v < cams.size(); ++v)
        for (const auto& r : raster::load_weights(dir / ("v" + std::to_string(v) + ".sswt")))
            dumped[r.gaussian] += r.weight;
    for (size_t i = 0; i < s.size(); ++i)
        CHECK(std::abs(bank.coverage[i] - dumped[i]) <=
              1e-6 * std::max(1.0, dumped[i]));
    fs::remove_all(dir);
}

TEST_CASE("coarse feature maps are bilinearly upsampled before aggregation") {
    auto s = tiny_scene(1, 11);
    raster::Camera cam;
    cam.width = 8;
    cam.height = 8;
    // 2x2 map upsampled to 8x8; record at a pixel whose source is exact
    lift::FeatureMap coarse = constant_map(2, 2, 1, 0.0, 0);
    coarse.at(0, 0, 0) = 1.0;
    coarse.at(1, 0, 0) = 3.0;
    coarse.at(0, 1, 0) = 5.0;
    coarse.at(1, 1, 0) = 7.0;
    auto up = lift::resize_bilinear(coarse, 8, 8);
    auto wr = make_weights(8, 8, {{3, 3, 0, 1.0}});
    auto bank = lift::lift_features(s, {cam}, {coarse}, {wr});
    CHECK(bank.at(0, 0) == doctest::Approx(up.at(3, 3, 0)));

    auto banks_same = lift::lift_features(s, {cam}, {up}, {wr});
    CHECK(bank.at(0, 0) == banks_same.at(0, 0));
}

TEST_CASE("feature bank files round-trip") {
    auto bank = lift::FeatureBank::zeros(3, 4);
    RngStream rng(12, "bank");
    for (auto& v : bank.data)
        v = static_cast<float>(rng.uniform(-2, 2));
    for (auto& v : bank.coverage)
        v = static_cast<float>(rng.uniform(0, 5));
    auto dir = fs::temp_directory_path() / "seqsplat_bank";
    fs::create_directories(dir);
    bank.save(dir / "b.ssfb");
    auto loaded = lift::FeatureBank::load(dir / "b.ssfb");
    CHECK(loaded.n == 3);
    CHECK(loaded.d == 4);
    CHECK(loaded.data == bank.data);
    CHECK(loaded.coverage == bank.coverage);
    fs::remove_all(dir);
}

TEST_CASE("view count mismatches are rejected") {
    auto s = tiny_scene(2, 13);
    raster::Camera cam;
    cam.width = 4;
    cam.height = 4;
    auto wr = make_weights(4, 4, {});
    CHECK_THROWS_WITH_AS(
        lift::lift_features(s, {cam}, {}, {wr}), doctest::Contains("view count"),
        std::runtime_error);
}
