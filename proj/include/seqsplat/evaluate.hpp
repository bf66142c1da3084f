// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// The three evaluation settings: single-step, sequential with gold step
// texts, end-to-end sequential.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seqsplat/dataset.hpp"
#include "seqsplat/lift.hpp"
#include "seqsplat/metrics.hpp"
#include "seqsplat/model.hpp"

namespace seqsplat::metrics {

enum class Setting { Single, SeqGt, Seq };

Setting setting_from_string(const std::string& s);
std::string to_string(Setting s);

struct SampleDetail {
    std::string scene_id;
    size_t sample_index = 0;
    size_t step_index = 0;  // single setting only
    double iou = 0.0, auc = 0.0, sim = 0.0, mae = 0.0;
    size_t pred_steps = 0, gt_steps = 0;
};

struct Report {
    Setting setting = Setting::Single;
    std::string split;
    size_t n_samples = 0;
    double miou = 0.0, mauc = 0.0, msim = 0.0, mmae = 0.0;
    std::vector<SampleDetail> details;
};

Report evaluate(const model::SeqSplatModel& m, const data::Dataset& dataset,
                const std::string& split, Setting setting, bool features_on,
                const lift::LiftOptions& lift_opts);

// Scores prediction sequences against ground truth, paired by index; the
// model-free path behind the metrics CLI.
Report score_predictions(const std::vector<std::vector<scene::AffordanceMask>>& pred,
                         const std::vector<std::vector<scene::AffordanceMask>>& gt);

void write_report(const Report& report, const std::filesystem::path& path);
void write_details(const Report& report, const std::filesystem::path& path);

}  // namespace seqsplat::metrics
