// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic dataset: procedural objects with labeled
// affordance parts, rejection-sampled scene composition, and an instruction
// grammar emitting (instruction, ordered mask sequence) pairs.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seqsplat/scene.hpp"

namespace seqsplat::datagen {

struct PartSpec {
    std::string name;
    std::string affordance_type;
    size_t begin = 0, end = 0;  // primitive index range [begin, end)
};

struct ObjectTemplate {
    std::string name;      // unique; default templates use the category name
    std::string category;  // one of object_categories()
    size_t primitive_count = 0;
    std::vector<PartSpec> parts;  // disjoint, within primitive_count
};

struct StepSpec {
    std::string category;
    std::string affordance_type;
    std::string text;  // may carry {slot}s
};

struct InstructionRule {
    std::string id;
    std::string instruction;  // may carry {slot}s
    std::vector<StepSpec> steps;
};

const std::vector<std::string>& object_categories();  // 21 categories
const std::vector<std::string>& affordance_types();   // 18 types
const std::vector<ObjectTemplate>& default_templates();
const std::vector<InstructionRule>& default_rules();

// Deterministic in (template, seed); one mask per affordance part, each mask
// covering exactly its part's range.
std::pair<scene::GaussianScene, std::vector<scene::AffordanceMask>> generate_object(
    const ObjectTemplate& tmpl, uint64_t seed);

struct SceneGenConfig {
    size_t min_objects = 2;
    size_t max_objects = 5;
    size_t max_sequences = 3;
    size_t placement_retries = 100;
};

struct GeneratedScene {
    scene::GaussianScene scn;
    std::vector<scene::AffordanceSequence> sequences;
};

GeneratedScene generate_scene(const std::vector<ObjectTemplate>& templates,
                              const std::vector<InstructionRule>& rules, uint64_t seed,
                              const SceneGenConfig& cfg = {});

struct DatasetConfig {
    size_t scenes = 8;
    uint64_t seed = 0;
    double split_ratio = 0.75;
    SceneGenConfig scene_gen;
};

struct Manifest {
    struct Entry {
        std::string id;
        std::string scene;        // relative path
        std::string annotations;  // relative path
        std::string split;        // "train" or "val"
    };
    std::vector<Entry> entries;
    std::string content_hash;
    size_t n_scenes = 0, n_train = 0, n_val = 0, n_sequences = 0, n_masks = 0;
};

Manifest emit_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const DatasetConfig& cfg,
                   const std::filesystem::path& path);

}  // namespace seqsplat::datagen
