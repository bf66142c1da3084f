// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace seqsplat::scene {

// Degree-0 SH to RGB: c = clamp(0.5 + C0 * f_dc, 0, 1)
constexpr double kShC0 = 0.28209479177387814;

struct GaussianPrimitive {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    // (w,x,y,z), Hamilton product, right-handed; kept unit-norm
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d scale = Eigen::Vector3d::Ones();
    double opacity = 1.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();  // f_dc coefficients

    Eigen::Vector3d rgb() const {
        return (Eigen::Vector3d::Constant(0.5) + kShC0 * color)
            .cwiseMax(0.0)
            .cwiseMin(1.0);
    }
};

struct GaussianScene {
    std::vector<GaussianPrimitive> primitives;
    std::optional<std::vector<int>> object_labels;  // per-primitive instance id

    size_t size() const { return primitives.size(); }
    // throws when an invariant is violated
    void validate() const;
};

struct AffordanceMask {
    std::vector<double> scores;  // in [0,1]; binary masks use exactly {0,1}
    std::string affordance_type;

    size_t size() const { return scores.size(); }
    bool is_binary() const;
    size_t cardinality(double threshold = 0.5) const;
    bool empty_mask(double threshold = 0.5) const { return cardinality(threshold) == 0; }

    static AffordanceMask zeros(size_t n, std::string type = "");
    static AffordanceMask from_range(size_t n, size_t begin, size_t end, std::string type);
};

struct AffordanceStep {
    std::string text;
    AffordanceMask mask;
};

struct AffordanceSequence {
    std::string instruction;
    std::vector<AffordanceStep> steps;  // length T >= 1

    size_t length() const { return steps.size(); }
};

struct RigidScaleTransform {
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    double uniform_scale = 1.0;

    static RigidScaleTransform identity() { return {}; }
    // apply `first`, then `second`
    static RigidScaleTransform compose(const RigidScaleTransform& second,
                                       const RigidScaleTransform& first);
    Eigen::Vector3d apply_point(const Eigen::Vector3d& p) const {
        return uniform_scale * (rotation * p) + translation;
    }
};

// --- operations -----------------------------------------------------------------

// Community-standard 3DGS PLY layout: element vertex with float32 properties
// x y z f_dc_0 f_dc_1 f_dc_2 opacity scale_0 scale_1 scale_2 rot_0..rot_3.
// ASCII and binary-little-endian accepted; unknown fixed-size properties are
// skipped so real assets with extra channels still import.
GaussianScene load_scene(const std::filesystem::path& path);

// Binary little-endian writer; load(save(x)) equals x within 1e-6 per field.
void save_scene(const GaussianScene& scene, const std::filesystem::path& path);

// Reads only the header and returns the vertex count.
size_t peek_scene_size(const std::filesystem::path& path);

GaussianScene apply_transform(const GaussianScene& scene, const RigidScaleTransform& t);

struct ScenePart {
    GaussianScene scene;
    RigidScaleTransform transform;
    std::vector<AffordanceMask> masks;
};

struct ComposedScene {
    GaussianScene scene;
    std::vector<AffordanceMask> masks;  // re-indexed, zero-padded to total N
    std::vector<size_t> offsets;        // per-part primitive offset
};

ComposedScene compose_scenes(const std::vector<ScenePart>& parts);

// --- annotations ------------------------------------------------------------------
//
// JSON document: {"scene": relpath, "masks": {id: {"type":..., "rle": "s:l,..."
// or "soft_b16": base64(u16 LE)}}, "samples": [{"instruction":...,
// "steps": [{"text":..., "mask": id}]}]}.

struct AnnotationDoc {
    std::string scene_path;  // relative to the annotation file
    std::vector<AffordanceSequence> samples;
};

// Resolves `scene` relative to the annotation file to obtain N.
AnnotationDoc load_annotations(const std::filesystem::path& path);
// Use when N is already known (no scene file required).
AnnotationDoc load_annotations(const std::filesystem::path& path, size_t n);

void save_annotations(const AnnotationDoc& doc, const std::filesystem::path& path);

// RLE helpers ("start:len,start:len" over sorted primitive indices)
std::string rle_encode(const AffordanceMask& mask, double threshold = 0.5);
AffordanceMask rle_decode(const std::string& rle, size_t n, std::string type);

std::string soft_b16_encode(const AffordanceMask& mask);
AffordanceMask soft_b16_decode(const std::string& b64, size_t n, std::string type);

}  // namespace seqsplat::scene
