// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "seqsplat/raster.hpp"
#include "seqsplat/util.hpp"

using namespace seqsplat;
namespace fs = std::filesystem;

namespace {

raster::Camera simple_camera(int w = 64, int h = 64, double f = 100.0) {
    raster::Camera cam;
    cam.fx = cam.fy = f;
    cam.cx = w / 2.0;
    cam.cy = h / 2.0;
    cam.width = w;
    cam.height = h;
    cam.near = 0.1;
    cam.far = 100.0;
    return cam;
}

scene::GaussianPrimitive prim(Eigen::Vector3d pos, double scale, double opacity,
                              Eigen::Vector3d rgb = {1.0, 0.0, 0.0}) {
    scene::GaussianPrimitive g;
    g.position = std::move(pos);
    g.scale = Eigen::Vector3d::Constant(scale);
    g.opacity = opacity;
    g.color = (rgb - Eigen::Vector3d::Constant(0.5)) / scene::kShC0;
    return g;
}

scene::GaussianScene random_cloud(size_t n, uint64_t seed) {
    RngStream rng(seed, "cloud");
    scene::GaussianScene s;
    for (size_t i = 0; i < n; ++i) {
        auto g = prim({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)},
                      rng.uniform(0.01, 0.15), rng.uniform(0.1, 1.0),
                      {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)});
        g.rotation = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(),
                                        rng.normal())
                         .normalized();
        g.scale = {rng.uniform(0.01, 0.2), rng.uniform(0.01, 0.2), rng.uniform(0.01, 0.2)};
        s.primitives.push_back(g);
    }
    return s;
}

}  // namespace

TEST_CASE("gaussian on the optical axis projects to the principal point") {
    auto cam = simple_camera();
    auto sg = raster::project_gaussian(prim({0, 0, 5}, 0.05, 0.8), cam);
    REQUIRE(sg.has_value());
    CHECK(sg->mean2d.x() == doctest::Approx(cam.cx));
    CHECK(sg->mean2d.y() == doctest::Approx(cam.cy));
    CHECK(sg->depth == doctest::Approx(5.0));
}

TEST_CASE("isotropic on-axis covariance matches the numeric Jacobian product") {
    auto cam = simple_camera();
    double s = 0.07, z = 4.0;
    auto sg = raster::project_gaussian(prim({0, 0, z}, s, 0.8), cam);
    REQUIRE(sg.has_value());

    // independent evaluation of J Sigma J^T at the mean
    Eigen::Matrix3d sigma = Eigen::Matrix3d::Identity() * s * s;
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / z, 0, 0, 0, cam.fy / z, 0;
    Eigen::Matrix2d expect = jac * sigma * jac.transpose();
    expect(0, 0) += 0.3;
    expect(1, 1) += 0.3;
    CHECK((sg->cov2d - expect).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(sg->cov2d(0, 0) == doctest::Approx(std::pow(cam.fx * s / z, 2) + 0.3));
}

TEST_CASE("depth outside (near, far) is culled") {
    auto cam = simple_camera();
    CHECK_FALSE(raster::project_gaussian(prim({0, 0, 0.05}, 0.01, 1.0), cam).has_value());
    CHECK_FALSE(raster::project_gaussian(prim({0, 0, 150}, 0.01, 1.0), cam).has_value());
    CHECK_FALSE(raster::project_gaussian(prim({50, 0, 5}, 0.01, 1.0), cam).has_value());
}

TEST_CASE("alpha at the mean equals the opacity") {
    auto cam = simple_camera();
    scene::GaussianScene s;
    s.primitives.push_back(prim({0, 0, 5}, 0.05, 0.6));
    auto wr = raster::render_weights(s, cam);
    // pixel (32,32) sits exactly on the projected mean: w = alpha = 0.6
    size_t p = 32 * 64 + 32;
    REQUIRE(wr.pixel_offset[p + 1] - wr.pixel_offset[p] == 1);
    CHECK(wr.records[wr.pixel_offset[p]].weight == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("two coincident gaussians composite to 0.5 and 0.25 exactly") {
    auto cam = simple_camera();
    scene::GaussianScene s;
    s.primitives.push_back(prim({0, 0, 5}, 0.05, 0.5));
    s.primitives.push_back(prim({0, 0, 5}, 0.05, 0.5));
    auto wr = raster::render_weights(s, cam);
    size_t p = 32 * 64 + 32;
    REQUIRE(wr.pixel_offset[p + 1] - wr.pixel_offset[p] == 2);
    const auto& front = wr.records[wr.pixel_offset[p]];
    const auto& back = wr.records[wr.pixel_offset[p] + 1];
    CHECK(front.gaussian == 0);  // depth tie broken by source index
    CHECK(front.weight == 0.5);
    CHECK(back.weight == 0.5 * (1.0 - 0.5));
}

TEST_CASE("empty scene renders no records and pure background") {
    auto cam = simple_camera(16, 16);
    scene::GaussianScene s;
    auto wr = raster::render_weights(s, cam);
    CHECK(wr.records.empty());
    for (double t : wr.transmittance)
        CHECK(t == 1.0);
    auto img = raster::render_rgb(s, cam, {0.2, 0.4, 0.6});
    for (int y = 0; y < 16; ++y) {
        CHECK(img.at(3, y, 0) == doctest::Approx(0.2));
        CHECK(img.at(3, y, 2) == doctest::Approx(0.6));
    }
}

TEST_CASE("an opaque gaussian leaves ~1% background at its center pixel") {
    auto cam = simple_camera();
    scene::GaussianScene s;
    s.primitives.push_back(prim({0, 0, 5}, 0.05, 1.0, {1, 0, 0}));
    auto img = raster::render_rgb(s, cam, {0, 0, 1});
    CHECK(img.at(32, 32, 0) == doctest::Approx(0.99).epsilon(1e-9));
    CHECK(img.at(32, 32, 2) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("render_rgb equals a manual blend of render_weights output") {
    auto cam = simple_camera(48, 48);
    auto s = random_cloud(40, 7);
    Eigen::Vector3d bg{0.1, 0.2, 0.3};
    auto img = raster::render_rgb(s, cam, bg);
    auto wr = raster::render_weights(s, cam);
    for (size_t p = 0; p < static_cast<size_t>(48 * 48); ++p) {
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (uint32_t r = wr.pixel_offset[p]; r < wr.pixel_offset[p + 1]; ++r)
            c += wr.records[r].weight * s.primitives[wr.records[r].gaussian].rgb();
        c += wr.transmittance[p] * bg;
        for (int ch = 0; ch < 3; ++ch)
            CHECK(std::abs(std::clamp(c[ch], 0.0, 1.0) - img.rgb[p * 3 + ch]) < 1e-6);
    }
}

TEST_CASE("per-pixel weights conserve 1 - T_final before cutoff") {
    for (uint64_t seed = 0; seed < 6; ++seed) {
        auto s = random_cloud(30 + seed * 10, 100 + seed);
        auto cam = simple_camera(40, 40, 60.0);
        raster::RenderOptions opts;
        opts.weight_cutoff = 0.0;
        auto wr = raster::render_weights(s, cam, opts);
        for (size_t p = 0; p < static_cast<size_t>(40 * 40); ++p) {
            double sum = 0.0;
            for (uint32_t r = wr.pixel_offset[p]; r < wr.pixel_offset[p + 1]; ++r)
                sum += wr.records[r].weight;
            CHECK(std::abs(sum - (1.0 - wr.transmittance[p])) < 1e-6);
            CHECK(sum <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("a clamped front gaussian scales the next weight by (1 - 0.99) exactly") {
    auto cam = simple_camera();
    scene::GaussianScene with, without;
    without.primitives.push_back(prim({0, 0, 6}, 0.05, 0.5));
    with.primitives.push_back(prim({0, 0, 5}, 0.05, 1.0));  // clamps to 0.99
    with.primitives.push_back(without.primitives[0]);
    raster::RenderOptions opts;
    opts.weight_cutoff = 0.0;
    auto wr_with = raster::render_weights(with, cam, opts);
    auto wr_without = raster::render_weights(without, cam, opts);
    size_t p = 32 * 64 + 32;
    REQUIRE(wr_with.pixel_offset[p + 1] - wr_with.pixel_offset[p] == 2);
    double w_back = wr_with.records[wr_with.pixel_offset[p] + 1].weight;
    double w_alone = wr_without.records[wr_without.pixel_offset[p]].weight;
    CHECK(w_back == w_alone * (1.0 - 0.99));  // bitwise: same multiply
}

TEST_CASE("render_weights is deterministic across runs") {
    auto s = random_cloud(60, 55);
    auto cam = simple_camera(52, 44, 70.0);
    auto a = raster::render_weights(s, cam);
    auto b = raster::render_weights(s, cam);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].gaussian == b.records[i].gaussian);
        CHECK(a.records[i].weight == b.records[i].weight);
    }
}

TEST_CASE("doubling resolution roughly quadruples per-gaussian total weight") {
    scene::GaussianScene s;
    s.primitives.push_back(prim({0, 0, 4}, 0.12, 0.7));
    auto cam1 = simple_camera(64, 64, 80.0);
    auto cam2 = simple_camera(128, 128, 160.0);
    raster::RenderOptions opts;
    opts.weight_cutoff = 0.0;
    auto sum_weights = [](const raster::WeightRender& wr) {
        double s = 0.0;
        for (const auto& r : wr.records)
            s += r.weight;
        return s;
    };
    double w1 = sum_weights(raster::render_weights(s, cam1, opts));
    double w2 = sum_weights(raster::render_weights(s, cam2, opts));
    CHECK(w2 / (4.0 * w1) == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("default view ring places cameras at equal azimuths looking at the center") {
    auto s = random_cloud(25, 77);
    auto cams = raster::default_view_ring(s, 4, 64, 64);
    REQUIRE(cams.size() == 4);
    auto [center, radius] = raster::bounding_sphere(s);
    for (size_t v = 0; v < 4; ++v) {
        Eigen::Vector3d c_cam = cams[v].to_camera(center);
        CHECK(std::abs(c_cam.x()) < 1e-9);
        CHECK(std::abs(c_cam.y()) < 1e-9);
        CHECK(c_cam.z() == doctest::Approx(1.5 * radius));
    }
    // azimuth spacing: eye positions are 90 degrees apart around the center
    Eigen::Vector3d e0 = -(cams[0].rotation.transpose() * cams[0].translation);
    Eigen::Vector3d e1 = -(cams[1].rotation.transpose() * cams[1].translation);
    Eigen::Vector2d d0 = (e0 - center).head<2>().normalized();
    Eigen::Vector2d d1 = (e1 - center).head<2>().normalized();
    CHECK(std::abs(d0.dot(d1)) < 1e-9);

    auto single = raster::default_view_ring(s, 1, 64, 64);
    CHECK(single.size() == 1);
}

TEST_CASE("every ring camera keeps the bounding sphere inside its frustum") {
    RngStream rng(91, "frustum");
    auto s = random_cloud(40, 91);
    auto [center, radius] = raster::bounding_sphere(s);
    auto cams = raster::default_view_ring(s, 8, 96, 96);
    for (const auto& cam : cams) {
        for (int k = 0; k < 200; ++k) {
            Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
            dir.normalize();
            Eigen::Vector3d p = cam.to_camera(center + radius * dir);
            CHECK(p.z() > cam.near);
            CHECK(p.z() < cam.far);
            double u = cam.fx * p.x() / p.z() + cam.cx;
            double v = cam.fy * p.y() / p.z() + cam.cy;
            CHECK(u >= -1e-9);
            CHECK(u <= cam.width + 1e-9);
            CHECK(v >= -1e-9);
            CHECK(v <= cam.height + 1e-9);
        }
    }
}

TEST_CASE("degenerate ring requests are rejected") {
    scene::GaussianScene s;
    CHECK_THROWS_AS(raster::default_view_ring(s, 4, 64, 64), std::runtime_error);
    s.primitives.push_back(prim({0, 0, 0}, 0.1, 1.0));
    CHECK_THROWS_AS(raster::default_view_ring(s, 0, 64, 64), std::runtime_error);
}

TEST_CASE("weight dump round-trips through SSWT") {
    auto s = random_cloud(20, 13);
    auto cam = simple_camera(32, 32, 40.0);
    auto wr = raster::render_weights(s, cam);
    auto dir = fs::temp_directory_path() / "seqsplat_sswt";
    fs::create_directories(dir);
    raster::save_weights(wr, dir / "w.sswt");
    auto loaded = raster::load_weights(dir / "w.sswt");
    REQUIRE(loaded.size() == wr.records.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].x == wr.records[i].x);
        CHECK(loaded[i].gaussian == wr.records[i].gaussian);
        CHECK(std::abs(loaded[i].weight - wr.records[i].weight) < 1e-6);
    }
    fs::remove_all(dir);
}

TEST_CASE("ppm writer emits a parseable P6 file") {
    raster::Image img;
    img.width = 2;
    img.height = 1;
    img.rgb = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
    auto dir = fs::temp_directory_path() / "seqsplat_ppm";
    fs::create_directories(dir);
    raster::save_ppm(img, dir / "img.ppm");
    std::string bytes = read_text_file(dir / "img.ppm");
    CHECK(bytes.rfind("P6\n2 1\n255\n", 0) == 0);
    CHECK(bytes.size() == 11 + 6);
    CHECK(static_cast<unsigned char>(bytes[11]) == 255);
    fs::remove_all(dir);
}
