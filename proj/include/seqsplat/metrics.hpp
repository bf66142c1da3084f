// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Single-step metrics (IoU, AUC, SIM, MAE) and their sequential variants
// with empty-frame padding alignment.

#pragma once

#include <cstddef>
#include <vector>

#include "seqsplat/scene.hpp"

namespace seqsplat::metrics {

constexpr double kBinarizeThreshold = 0.5;

struct StepScores {
    double iou = 0.0, auc = 0.0, sim = 0.0, mae = 0.0;
};

struct SequenceScores {
    double siou = 0.0, sauc = 0.0, ssim = 0.0, smae = 0.0;
    size_t aligned_length = 0;
};

// |bin(pred) AND gt| / |bin(pred) OR gt|; both empty -> 1, one empty -> 0.
double iou(const std::vector<double>& pred, const std::vector<double>& gt,
           double threshold = kBinarizeThreshold);

// Mann-Whitney rank statistic with the 1/2 tie correction. Constant gt:
// 1 when bin(pred) equals gt exactly, else 0.
double auc(const std::vector<double>& pred, const std::vector<double>& gt);

// Histogram-intersection similarity on sum-normalized maps; both zero -> 1,
// exactly one zero -> 0. Inputs must be nonnegative.
double sim(const std::vector<double>& pred, const std::vector<double>& gt);

double mae(const std::vector<double>& pred, const std::vector<double>& gt);

StepScores step_scores(const std::vector<double>& pred, const std::vector<double>& gt,
                       double threshold = kBinarizeThreshold);

// Pads the shorter sequence with all-zero masks; positional pairing.
std::pair<std::vector<scene::AffordanceMask>, std::vector<scene::AffordanceMask>>
align_sequences(std::vector<scene::AffordanceMask> pred,
                std::vector<scene::AffordanceMask> gt);

SequenceScores sequential_metrics(const std::vector<scene::AffordanceMask>& pred,
                                  const std::vector<scene::AffordanceMask>& gt);

}  // namespace seqsplat::metrics
