// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seqsplat/datagen.hpp"
#include "seqsplat/scene.hpp"

namespace seqsplat::data {

struct SceneEntry {
    std::string id;
    std::string split;
    std::filesystem::path scene_path;
    scene::GaussianScene scn;
    std::vector<scene::AffordanceSequence> sequences;
};

struct Dataset {
    std::vector<SceneEntry> entries;

    static Dataset load(const std::filesystem::path& manifest_path);

    std::vector<size_t> split_indices(const std::string& split) const;
    size_t sequence_count(const std::string& split) const;
    // instruction + step texts of the given split, for vocabulary building
    std::vector<std::string> corpus(const std::string& split) const;
};

}  // namespace seqsplat::data
