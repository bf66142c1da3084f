// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// The two training procedures: conditional geometric reconstruction
// pre-training and end-to-end sequential training with the combined
// language + mask loss.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seqsplat/autograd.hpp"
#include "seqsplat/dataset.hpp"
#include "seqsplat/lift.hpp"
#include "seqsplat/model.hpp"

namespace seqsplat::train {

struct TrainConfig {
    uint64_t seed = 0;
    size_t pretrain_epochs = 10;
    size_t epochs = 50;
    double lr = 1e-4;
    double lr_final = 1e-5;  // cosine decay target, main stage only
    double lambda_mask = 1.0;
    size_t batch = 4;
    double weight_decay = 0.01;
    model::ModelConfig model;
    lift::LiftOptions lift;

    void validate() const;
};

// bce_with_logits + dice on sigmoid(logits)
ag::Tensor mask_loss(const ag::Tensor& logits, const scene::AffordanceMask& gt);

// cross_entropy + lambda_mask * sum_t mask_loss_t
ag::Tensor total_loss(const ag::Tensor& token_logits, const std::vector<int>& gold_ids,
                      const std::vector<ag::Tensor>& mask_logits,
                      const std::vector<const scene::AffordanceMask*>& gt_masks,
                      double lambda_mask);

struct EpochLog {
    size_t epoch = 0;
    double lang = 0.0, mask = 0.0, total = 0.0;
    double wall_s = 0.0;
};

void write_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

struct PretrainResult {
    std::filesystem::path checkpoint;
    std::vector<EpochLog> log;
    double train_miou = 0.0;  // reconstruction mIoU over the training masks
};

// Flattens every mask of every train sequence into (scene, mask) pairs and
// optimizes encoder + mask encoder + reconstruction head.
PretrainResult run_pretrain(const data::Dataset& dataset, const TrainConfig& cfg,
                            const std::filesystem::path& out_dir);

struct TrainResult {
    std::filesystem::path checkpoint_dir;
    std::vector<EpochLog> log;
    double token_accuracy = 0.0;   // teacher-forced argmax on the train split
    double seg_count_match = 0.0;  // greedy <SEG>-count exact matches, train split
};

// Teacher-forced end-to-end training. `init_checkpoint` (optional) loads
// encoder.* from a pre-training run; features_on selects lifted banks or
// zero banks.
TrainResult run_train(const data::Dataset& dataset, const TrainConfig& cfg,
                      const std::filesystem::path& out_dir,
                      const std::filesystem::path& init_checkpoint = {},
                      bool features_on = true);

// Checkpoint bundle: params.ssck + vocab.json + model_config.json + meta.json
void save_model_bundle(const model::SeqSplatModel& m, bool features_on,
                       const std::filesystem::path& dir);
model::SeqSplatModel load_model_bundle(const std::filesystem::path& dir);
bool bundle_features_on(const std::filesystem::path& dir);

struct AblationRow {
    bool pretrain = false, features = false;
    double siou = 0.0, sauc = 0.0, ssim = 0.0, smae = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;  // the 2x2 grid in fixed order
};

// {pretrain off/on} x {features off/on}, each trained then scored on the
// val split in the end-to-end sequential setting.
AblationReport run_ablation(const data::Dataset& dataset, const TrainConfig& cfg,
                            const std::filesystem::path& out_dir);
void write_ablation(const AblationReport& report, const std::filesystem::path& path);

// Per-scene semantic bank: lifted when features_on, zero bank otherwise.
lift::FeatureBank scene_bank(const scene::GaussianScene& scn, bool features_on,
                             size_t d_sem, const lift::LiftOptions& opts);

}  // namespace seqsplat::train
