// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "seqsplat/scene.hpp"
#include "seqsplat/util.hpp"

using namespace seqsplat;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

scene::GaussianScene random_scene(size_t n, uint64_t seed) {
    RngStream rng(seed, "scene");
    scene::GaussianScene s;
    for (size_t i = 0; i < n; ++i) {
        scene::GaussianPrimitive g;
        g.position = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        g.rotation = q.normalized();
        g.scale = {rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5)};
        g.opacity = rng.uniform(0.0, 1.0);
        g.color = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        s.primitives.push_back(g);
    }
    return s;
}

const char* kAscii1 =
    "ply\n"
    "format ascii 1.0\n"
    "comment test fixture\n"
    "element vertex 1\n"
    "property float x\nproperty float y\nproperty float z\n"
    "property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n"
    "property float opacity\n"
    "property float scale_0\nproperty float scale_1\nproperty float scale_2\n"
    "property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n"
    "end_header\n"
    "1 2 3 0.1 0.2 0.3 0.5 0.01 0.02 0.03 2 0 0 0\n";

}  // namespace

TEST_CASE("ascii PLY with one primitive loads directly") {
    TempDir dir("seqsplat_scene_ascii");
    auto p = dir.path / "one.ply";
    std::ofstream(p) << kAscii1;
    auto s = scene::load_scene(p);
    REQUIRE(s.size() == 1);
    CHECK(s.primitives[0].opacity == doctest::Approx(0.5));
    CHECK(s.primitives[0].position.x() == doctest::Approx(1.0));
    // rot (2,0,0,0) is stored normalized
    CHECK(s.primitives[0].rotation.w() == doctest::Approx(1.0));
    CHECK(s.primitives[0].rotation.x() == doctest::Approx(0.0));
}

TEST_CASE("binary PLY round-trips bit-exactly") {
    TempDir dir("seqsplat_scene_bin");
    auto s = random_scene(3, 5);
    auto p = dir.path / "three.ply";
    scene::save_scene(s, p);
    auto s1 = scene::load_scene(p);
    auto p2 = dir.path / "three2.ply";
    scene::save_scene(s1, p2);
    CHECK(read_text_file(p) == read_text_file(p2));  // bytes equal on re-save
    auto s2 = scene::load_scene(p2);
    REQUIRE(s2.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(s1.primitives[i].position == s2.primitives[i].position);
        CHECK(s1.primitives[i].opacity == s2.primitives[i].opacity);
        CHECK(s1.primitives[i].rotation.coeffs() == s2.primitives[i].rotation.coeffs());
    }
}

TEST_CASE("load-save-load is a fixpoint within 1e-6 per field") {
    TempDir dir("seqsplat_scene_fix");
    auto s = random_scene(17, 99);
    auto p = dir.path / "s.ply";
    scene::save_scene(s, p);
    auto r = scene::load_scene(p);
    REQUIRE(r.size() == s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        CHECK((r.primitives[i].position - s.primitives[i].position).cwiseAbs().maxCoeff() <
              1e-6);
        CHECK((r.primitives[i].scale - s.primitives[i].scale).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(std::abs(r.primitives[i].opacity - s.primitives[i].opacity) < 1e-6);
        CHECK((r.primitives[i].rotation.coeffs() - s.primitives[i].rotation.coeffs())
                  .cwiseAbs()
                  .maxCoeff() < 1e-6);
        CHECK((r.primitives[i].color - s.primitives[i].color).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("file size equals header plus N times record size") {
    TempDir dir("seqsplat_scene_size");
    auto s = random_scene(1024, 3);
    auto p = dir.path / "big.ply";
    scene::save_scene(s, p);
    std::string bytes = read_text_file(p);
    size_t header = bytes.find("end_header\n") + std::string("end_header\n").size();
    CHECK(bytes.size() == header + 1024 * 14 * 4);
}

TEST_CASE("parse errors name the offending location") {
    TempDir dir("seqsplat_scene_err");
    auto p = dir.path / "bad.ply";
    std::ofstream(p) << "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"
                        "end_header\n0\n";
    CHECK_THROWS_WITH_AS(scene::load_scene(p), doctest::Contains("missing required"),
                         std::runtime_error);

    auto p2 = dir.path / "nan.ply";
    std::string body(kAscii1);
    body.replace(body.find("1 2 3"), 5, "nan 2 3");
    std::ofstream(p2) << body;
    CHECK_THROWS_WITH_AS(scene::load_scene(p2), doctest::Contains("non-finite"),
                         std::runtime_error);

    auto p3 = dir.path / "trunc.ply";
    std::string trunc(kAscii1);
    trunc.replace(trunc.find("element vertex 1"), 16, "element vertex 2");
    std::ofstream(p3) << trunc;
    CHECK_THROWS_WITH_AS(scene::load_scene(p3), doctest::Contains("line"),
                         std::runtime_error);
}

TEST_CASE("unknown extra properties are skipped") {
    TempDir dir("seqsplat_scene_extra");
    auto p = dir.path / "extra.ply";
    std::ofstream(p)
        << "ply\nformat ascii 1.0\nelement vertex 1\n"
           "property float x\nproperty float y\nproperty float z\n"
           "property float nx\n"
           "property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n"
           "property float opacity\n"
           "property float scale_0\nproperty float scale_1\nproperty float scale_2\n"
           "property float rot_0\nproperty float rot_1\nproperty float rot_2\n"
           "property float rot_3\n"
           "end_header\n"
           "1 2 3 9 0.1 0.2 0.3 0.5 0.01 0.02 0.03 1 0 0 0\n";
    auto s = scene::load_scene(p);
    REQUIRE(s.size() == 1);
    CHECK(s.primitives[0].color.x() == doctest::Approx(0.1));
}

TEST_CASE("identity transform leaves every field unchanged") {
    auto s = random_scene(9, 21);
    auto t = scene::apply_transform(s, scene::RigidScaleTransform::identity());
    for (size_t i = 0; i < s.size(); ++i) {
        CHECK(t.primitives[i].position == s.primitives[i].position);
        CHECK(t.primitives[i].scale == s.primitives[i].scale);
        CHECK(t.primitives[i].opacity == s.primitives[i].opacity);
    }
}

TEST_CASE("translation shifts positions only") {
    auto s = random_scene(5, 22);
    scene::RigidScaleTransform t;
    t.translation = {1.0, 0.0, 0.0};
    auto moved = scene::apply_transform(s, t);
    for (size_t i = 0; i < s.size(); ++i) {
        CHECK(moved.primitives[i].position.x() ==
              doctest::Approx(s.primitives[i].position.x() + 1.0));
        CHECK(moved.primitives[i].position.y() == s.primitives[i].position.y());
        CHECK(moved.primitives[i].scale == s.primitives[i].scale);
        CHECK(moved.primitives[i].rotation.coeffs() == s.primitives[i].rotation.coeffs());
    }
}

TEST_CASE("uniform scale 2 doubles positions and scales") {
    auto s = random_scene(5, 23);
    scene::RigidScaleTransform t;
    t.uniform_scale = 2.0;
    auto scaled = scene::apply_transform(s, t);
    for (size_t i = 0; i < s.size(); ++i) {
        CHECK(scaled.primitives[i].position == (2.0 * s.primitives[i].position).eval());
        CHECK(scaled.primitives[i].scale == (2.0 * s.primitives[i].scale).eval());
    }
}

TEST_CASE("transform composition agrees with sequential application") {
    RngStream rng(31, "compose");
    auto s = random_scene(7, 31);
    for (int trial = 0; trial < 10; ++trial) {
        scene::RigidScaleTransform t1, t2;
        t1.translation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        t2.translation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        t1.rotation = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(),
                                         rng.normal())
                          .normalized();
        t2.rotation = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(),
                                         rng.normal())
                          .normalized();
        t1.uniform_scale = rng.uniform(0.5, 2.0);
        t2.uniform_scale = rng.uniform(0.5, 2.0);
        auto seq = scene::apply_transform(scene::apply_transform(s, t1), t2);
        auto one = scene::apply_transform(s, scene::RigidScaleTransform::compose(t2, t1));
        for (size_t i = 0; i < s.size(); ++i) {
            CHECK((seq.primitives[i].position - one.primitives[i].position)
                      .cwiseAbs()
                      .maxCoeff() < 1e-9);
            CHECK((seq.primitives[i].scale - one.primitives[i].scale).cwiseAbs().maxCoeff() <
                  1e-9);
            // q and -q are the same rotation
            double dot =
                std::abs(seq.primitives[i].rotation.coeffs().dot(one.primitives[i].rotation.coeffs()));
            CHECK(dot == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("compose_scenes re-indexes masks by cumulative offset") {
    auto a = random_scene(3, 41);
    auto b = random_scene(5, 42);
    scene::AffordanceMask mb = scene::AffordanceMask::zeros(5, "grasp");
    mb.scores[0] = 1.0;
    mb.scores[2] = 1.0;
    auto composed = scene::compose_scenes(
        {{a, scene::RigidScaleTransform::identity(), {}},
         {b, scene::RigidScaleTransform::identity(), {mb}}});
    CHECK(composed.scene.size() == 8);
    REQUIRE(composed.masks.size() == 1);
    const auto& m = composed.masks[0];
    CHECK(m.size() == 8);
    CHECK(m.scores[3] == 1.0);
    CHECK(m.scores[5] == 1.0);
    CHECK(m.cardinality() == 2);
    // single part + identity equals apply_transform
    auto single = scene::compose_scenes({{a, scene::RigidScaleTransform::identity(), {}}});
    for (size_t i = 0; i < a.size(); ++i)
        CHECK(single.scene.primitives[i].position == a.primitives[i].position);
}

TEST_CASE("three-part composition matches brute-force index bookkeeping") {
    RngStream rng(43, "threepart");
    std::vector<scene::ScenePart> parts;
    std::vector<std::pair<size_t, size_t>> expected;  // (part, local index) of set bits
    size_t sizes[3] = {4, 6, 3};
    for (size_t p = 0; p < 3; ++p) {
        scene::ScenePart part;
        part.scene = random_scene(sizes[p], 50 + p);
        part.transform = scene::RigidScaleTransform::identity();
        scene::AffordanceMask m = scene::AffordanceMask::zeros(sizes[p], "t");
        for (size_t i = 0; i < sizes[p]; ++i)
            if (rng.uniform() < 0.4) {
                m.scores[i] = 1.0;
                expected.emplace_back(p, i);
            }
        if (m.cardinality() == 0) {
            m.scores[0] = 1.0;
            expected.emplace_back(p, 0);
        }
        part.masks.push_back(m);
        parts.push_back(part);
    }
    auto composed = scene::compose_scenes(parts);
    size_t offsets[3] = {0, 4, 10};
    size_t total_bits = 0;
    for (const auto& m : composed.masks)
        total_bits += m.cardinality();
    CHECK(total_bits == expected.size());  // cardinality preserved
    for (auto [p, i] : expected) {
        bool found = false;
        for (const auto& m : composed.masks)
            if (m.scores[offsets[p] + i] == 1.0)
                found = true;
        CHECK(found);
    }
}

TEST_CASE("compose_scenes rejects mask length mismatch") {
    auto a = random_scene(3, 60);
    scene::AffordanceMask wrong = scene::AffordanceMask::zeros(4, "t");
    CHECK_THROWS_AS(
        scene::compose_scenes({{a, scene::RigidScaleTransform::identity(), {wrong}}}),
        std::runtime_error);
}

TEST_CASE("rle decode matches the hand-decoded example") {
    // start:length runs of ones: "0:3" -> {0,1,2}, "5:2" -> {5,6}
    auto m = scene::rle_decode("0:3,5:2", 8, "open");
    std::vector<double> want = {1, 1, 1, 0, 0, 1, 1, 0};
    CHECK(m.scores == want);
    CHECK(scene::rle_encode(m) == "0:3,5:2");
}

TEST_CASE("rle rejects out-of-bounds indices") {
    CHECK_THROWS_WITH_AS(scene::rle_decode("7:3", 8, "x"), doctest::Contains("out of bounds"),
                         std::runtime_error);
}

TEST_CASE("soft masks survive b16 quantization within half a step") {
    RngStream rng(71, "soft");
    scene::AffordanceMask m = scene::AffordanceMask::zeros(33, "pour");
    for (auto& s : m.scores)
        s = rng.uniform(0.0, 1.0);
    auto rt = scene::soft_b16_decode(scene::soft_b16_encode(m), 33, "pour");
    for (size_t i = 0; i < m.size(); ++i)
        CHECK(std::abs(rt.scores[i] - m.scores[i]) <= 0.5 / 65535.0 + 1e-12);
}

TEST_CASE("annotation files round-trip with binary and soft masks") {
    TempDir dir("seqsplat_ann");
    auto s = random_scene(8, 81);
    scene::save_scene(s, dir.path / "scene.ply");

    scene::AnnotationDoc doc;
    doc.scene_path = "scene.ply";
    scene::AffordanceSequence seq;
    seq.instruction = "open the bin then drop the wrapper";
    scene::AffordanceStep st1{"open the lid", scene::rle_decode("0:3,5:2", 8, "open")};
    scene::AffordanceMask soft = scene::AffordanceMask::zeros(8, "contain");
    soft.scores = {0.1, 0.9, 0.25, 0, 0, 0.5, 0, 1};
    scene::AffordanceStep st2{"drop it inside", soft};
    seq.steps = {st1, st2};
    doc.samples.push_back(seq);
    scene::save_annotations(doc, dir.path / "scene.json");

    auto loaded = scene::load_annotations(dir.path / "scene.json");
    REQUIRE(loaded.samples.size() == 1);
    REQUIRE(loaded.samples[0].steps.size() == 2);
    CHECK(loaded.samples[0].instruction == seq.instruction);
    CHECK(loaded.samples[0].steps[0].mask.scores == st1.mask.scores);
    CHECK(loaded.samples[0].steps[0].mask.affordance_type == "open");
    for (size_t i = 0; i < 8; ++i)
        CHECK(std::abs(loaded.samples[0].steps[1].mask.scores[i] - soft.scores[i]) < 1e-4);
}

TEST_CASE("annotations reject dangling references, bad indices, empty steps") {
    TempDir dir("seqsplat_ann_bad");
    auto write = [&](const char* name, const std::string& body) {
        std::ofstream(dir.path / name) << body;
        return dir.path / name;
    };
    auto p1 = write("dangle.json",
                    R"({"scene":"s.ply","masks":{},"samples":[{"instruction":"x",)"
                    R"("steps":[{"text":"y","mask":"nope"}]}]})");
    CHECK_THROWS_WITH_AS(scene::load_annotations(p1, 8), doctest::Contains("dangling"),
                         std::runtime_error);
    auto p2 = write("oob.json",
                    R"({"scene":"s.ply","masks":{"m0":{"type":"t","rle":"9:1"}},)"
                    R"("samples":[{"instruction":"x","steps":[{"text":"y","mask":"m0"}]}]})");
    CHECK_THROWS_AS(scene::load_annotations(p2, 8), std::runtime_error);
    auto p3 = write("empty.json",
                    R"({"scene":"s.ply","masks":{"m0":{"type":"t","rle":"0:1"}},)"
                    R"("samples":[{"instruction":"x","steps":[]}]})");
    CHECK_THROWS_WITH_AS(scene::load_annotations(p3, 8), doctest::Contains("empty steps"),
                         std::runtime_error);
}

TEST_CASE("save_scene to a fresh directory target creates the file") {
    TempDir dir("seqsplat_scene_fresh");
    auto sub = dir.path / "nested";
    fs::create_directories(sub);
    auto s = random_scene(2, 90);
    scene::save_scene(s, sub / "out.ply");
    CHECK(fs::exists(sub / "out.ply"));
    CHECK_THROWS_AS(scene::save_scene(s, dir.path / "missing_dir" / "out.ply"),
                    std::exception);
}
