// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace seqsplat::metrics {

namespace {

void check_lengths(const std::vector<double>& a, const std::vector<double>& b,
                   const char* what) {
    if (a.size() != b.size())
        throw std::runtime_error(std::string(what) + ": length mismatch (" +
                                 std::to_string(a.size()) + " vs " +
                                 std::to_string(b.size()) + ")");
}

inline bool binarize(double v, double threshold) { return v >= threshold; }

}  // namespace

double iou(const std::vector<double>& pred, const std::vector<double>& gt,
           double threshold) {
    check_lengths(pred, gt, "iou");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        bool p = binarize(pred[i], threshold);
        bool g = binarize(gt[i], threshold);
        inter += p && g;
        uni += p || g;
    }
    if (uni == 0)
        return 1.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double auc(const std::vector<double>& pred, const std::vector<double>& gt) {
    check_lengths(pred, gt, "auc");
    std::vector<double> pos, neg;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (binarize(gt[i], kBinarizeThreshold))
            pos.push_back(pred[i]);
        else
            neg.push_back(pred[i]);
    }
    if (pos.empty() || neg.empty()) {
        for (size_t i = 0; i < pred.size(); ++i)
            if (binarize(pred[i], kBinarizeThreshold) !=
                binarize(gt[i], kBinarizeThreshold))
                return 0.0;
        return 1.0;
    }
    // wins and ties counted against the sorted negatives; exact integers
    std::sort(neg.begin(), neg.end());
    double numerator = 0.0;
    for (double p : pos) {
        size_t wins = static_cast<size_t>(
            std::lower_bound(neg.begin(), neg.end(), p) - neg.begin());
        size_t ties = static_cast<size_t>(
            std::upper_bound(neg.begin(), neg.end(), p) - neg.begin()) - wins;
        numerator += static_cast<double>(wins) + 0.5 * static_cast<double>(ties);
    }
    return numerator / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double sim(const std::vector<double>& pred, const std::vector<double>& gt) {
    check_lengths(pred, gt, "sim");
    double psum = 0.0, gsum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0.0 || gt[i] < 0.0)
            throw std::runtime_error("sim: negative input");
        psum += pred[i];
        gsum += gt[i];
    }
    if (psum == 0.0 && gsum == 0.0)
        return 1.0;
    if (psum == 0.0 || gsum == 0.0)
        return 0.0;
    double s = 0.0;
    for (size_t i = 0; i < pred.size(); ++i)
        s += std::min(pred[i] / psum, gt[i] / gsum);
    return s;
}

double mae(const std::vector<double>& pred, const std::vector<double>& gt) {
    check_lengths(pred, gt, "mae");
    if (pred.empty())
        throw std::runtime_error("mae: empty input");
    double s = 0.0;
    for (size_t i = 0; i < pred.size(); ++i)
        s += std::abs(pred[i] - gt[i]);
    return s / static_cast<double>(pred.size());
}

StepScores step_scores(const std::vector<double>& pred, const std::vector<double>& gt,
                       double threshold) {
    return {iou(pred, gt, threshold), auc(pred, gt), sim(pred, gt), mae(pred, gt)};
}

std::pair<std::vector<scene::AffordanceMask>, std::vector<scene::AffordanceMask>>
align_sequences(std::vector<scene::AffordanceMask> pred,
                std::vector<scene::AffordanceMask> gt) {
    size_t n = 0;
    for (const auto& m : pred)
        n = std::max(n, m.size());
    for (const auto& m : gt)
        n = std::max(n, m.size());
    for (const auto& m : pred)
        if (m.size() != n)
            throw std::runtime_error("align_sequences: mask length mismatch");
    for (const auto& m : gt)
        if (m.size() != n)
            throw std::runtime_error("align_sequences: mask length mismatch");
    size_t len = std::max(pred.size(), gt.size());
    while (pred.size() < len)
        pred.push_back(scene::AffordanceMask::zeros(n, "pad"));
    while (gt.size() < len)
        gt.push_back(scene::AffordanceMask::zeros(n, "pad"));
    return {std::move(pred), std::move(gt)};
}

SequenceScores sequential_metrics(const std::vector<scene::AffordanceMask>& pred,
                                  const std::vector<scene::AffordanceMask>& gt) {
    if (pred.empty() && gt.empty())
        throw std::runtime_error("sequential_metrics: both sequences empty");
    auto [p, g] = align_sequences(pred, gt);
    SequenceScores out;
    out.aligned_length = p.size();
    for (size_t t = 0; t < p.size(); ++t) {
        StepScores s = step_scores(p[t].scores, g[t].scores);
        out.siou += s.iou;
        out.sauc += s.auc;
        out.ssim += s.sim;
        out.smae += s.mae;
    }
    double len = static_cast<double>(out.aligned_length);
    out.siou /= len;
    out.sauc /= len;
    out.ssim /= len;
    out.smae /= len;
    return out;
}

}  // namespace seqsplat::metrics
