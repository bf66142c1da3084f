// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/dataset.hpp"

#include <stdexcept>

namespace seqsplat::data {

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
    datagen::Manifest manifest = datagen::load_manifest(manifest_path);
    std::filesystem::path root = manifest_path.parent_path();
    Dataset out;
    for (const auto& e : manifest.entries) {
        SceneEntry entry;
        entry.id = e.id;
        entry.split = e.split;
        entry.scene_path = root / e.scene;
        entry.scn = scene::load_scene(entry.scene_path);
        auto doc = scene::load_annotations(root / e.annotations, entry.scn.size());
        entry.sequences = std::move(doc.samples);
        out.entries.push_back(std::move(entry));
    }
    if (out.entries.empty())
        throw std::runtime_error("dataset: empty manifest " + manifest_path.string());
    return out;
}

std::vector<size_t> Dataset::split_indices(const std::string& split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (split.empty() || entries[i].split == split)
            out.push_back(i);
    return out;
}

size_t Dataset::sequence_count(const std::string& split) const {
    size_t n = 0;
    for (size_t i : split_indices(split))
        n += entries[i].sequences.size();
    return n;
}

std::vector<std::string> Dataset::corpus(const std::string& split) const {
    std::vector<std::string> out;
    for (size_t i : split_indices(split))
        for (const auto& seq : entries[i].sequences) {
            out.push_back(seq.instruction);
            for (const auto& step : seq.steps)
                out.push_back(step.text);
        }
    return out;
}

}  // namespace seqsplat::data
