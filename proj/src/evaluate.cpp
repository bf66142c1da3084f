// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/evaluate.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "seqsplat/train.hpp"
#include "seqsplat/util.hpp"

namespace seqsplat::metrics {

Setting setting_from_string(const std::string& s) {
    if (s == "single")
        return Setting::Single;
    if (s == "seq_gt")
        return Setting::SeqGt;
    if (s == "seq")
        return Setting::Seq;
    throw std::runtime_error("unknown evaluation setting '" + s +
                             "' (expected single|seq_gt|seq)");
}

std::string to_string(Setting s) {
    switch (s) {
        case Setting::Single: return "single";
        case Setting::SeqGt: return "seq_gt";
        case Setting::Seq: return "seq";
    }
    return "?";
}

namespace {

scene::AffordanceMask soft_mask(const ag::Tensor& logits) {
    scene::AffordanceMask m;
    m.scores.resize(logits.size());
    for (size_t i = 0; i < m.scores.size(); ++i) {
        double x = logits.at(i);
        m.scores[i] =
            x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return m;
}

}  // namespace

Report evaluate(const model::SeqSplatModel& m, const data::Dataset& dataset,
                const std::string& split, Setting setting, bool features_on,
                const lift::LiftOptions& lift_opts) {
    ag::NoGradGuard ng;
    auto indices = dataset.split_indices(split);
    if (indices.empty())
        throw std::runtime_error("evaluate: split '" + split + "' is empty");

    Report report;
    report.setting = setting;
    report.split = split;

    for (size_t ei : indices) {
        const auto& entry = dataset.entries[ei];
        lift::FeatureBank bank = train::scene_bank(entry.scn, features_on,
                                                   m.config().d_sem, lift_opts);
        ag::Tensor f_geo = m.encode_scene(entry.scn);

        for (size_t si = 0; si < entry.sequences.size(); ++si) {
            const auto& sample = entry.sequences[si];
            if (setting == Setting::Single) {
                // each (step_text, mask) scored independently through a
                // teacher-forced single-step pass
                for (size_t t = 0; t < sample.steps.size(); ++t) {
                    const auto& step = sample.steps[t];
                    std::vector<int> instr = m.encode_instruction(step.text);
                    std::vector<int> gold = m.encode_instruction(step.text);
                    gold.push_back(model::Vocabulary::kSeg);
                    gold.push_back(model::Vocabulary::kEos);
                    model::SegOutput plan = m.plan_teacher_forced(instr, gold);
                    scene::AffordanceMask pred =
                        soft_mask(m.decode_affordance(plan.seg_states.at(0), f_geo, bank));
                    StepScores s = step_scores(pred.scores, step.mask.scores);
                    report.details.push_back(
                        {entry.id, si, t, s.iou, s.auc, s.sim, s.mae, 1, 1});
                }
            } else {
                model::SegOutput plan;
                if (setting == Setting::SeqGt)
                    plan = m.plan_teacher_forced(m.encode_instruction(sample.instruction),
                                                 m.gold_output_ids(sample));
                else
                    plan = m.plan_greedy(m.encode_instruction(sample.instruction));
                std::vector<scene::AffordanceMask> pred;
                for (const auto& state : plan.seg_states)
                    pred.push_back(soft_mask(m.decode_affordance(state, f_geo, bank)));
                std::vector<scene::AffordanceMask> gt;
                for (const auto& step : sample.steps)
                    gt.push_back(step.mask);
                SequenceScores s = sequential_metrics(pred, gt);
                report.details.push_back({entry.id, si, 0, s.siou, s.sauc, s.ssim, s.smae,
                                          pred.size(), gt.size()});
            }
        }
    }

    report.n_samples = report.details.size();
    for (const auto& d : report.details) {
        report.miou += d.iou;
        report.mauc += d.auc;
        report.msim += d.sim;
        report.mmae += d.mae;
    }
    double n = static_cast<double>(report.n_samples);
    report.miou /= n;
    report.mauc /= n;
    report.msim /= n;
    report.mmae /= n;
    return report;
}

Report score_predictions(const std::vector<std::vector<scene::AffordanceMask>>& pred,
                         const std::vector<std::vector<scene::AffordanceMask>>& gt) {
    if (pred.size() != gt.size())
        throw std::runtime_error("score_predictions: " + std::to_string(pred.size()) +
                                 " prediction samples vs " + std::to_string(gt.size()) +
                                 " ground-truth samples");
    if (pred.empty())
        throw std::runtime_error("score_predictions: empty input");
    Report report;
    report.setting = Setting::Seq;
    report.split = "external";
    for (size_t i = 0; i < pred.size(); ++i) {
        SequenceScores s = sequential_metrics(pred[i], gt[i]);
        report.details.push_back({"sample", i, 0, s.siou, s.sauc, s.ssim, s.smae,
                                  pred[i].size(), gt[i].size()});
    }
    report.n_samples = report.details.size();
    for (const auto& d : report.details) {
        report.miou += d.iou;
        report.mauc += d.auc;
        report.msim += d.sim;
        report.mmae += d.mae;
    }
    double n = static_cast<double>(report.n_samples);
    report.miou /= n;
    report.mauc /= n;
    report.msim /= n;
    report.mmae /= n;
    return report;
}

void write_report(const Report& report, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "setting\tsplit\tn_samples\tmIoU/sIoU\tAUC/sAUC\tSIM/sSIM\tMAE/sMAE\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%s\t%s\t%zu\t%.4f\t%.4f\t%.4f\t%.4f\n",
                  to_string(report.setting).c_str(), report.split.c_str(),
                  report.n_samples, report.miou, report.mauc, report.msim, report.mmae);
    os << line;
    write_file_atomic(path, os.str());
}

void write_details(const Report& report, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "scene\tsample\tstep\tiou\tauc\tsim\tmae\tpred_steps\tgt_steps\n";
    for (const auto& d : report.details) {
        char line[256];
        std::snprintf(line, sizeof(line), "%s\t%zu\t%zu\t%.4f\t%.4f\t%.4f\t%.4f\t%zu\t%zu\n",
                      d.scene_id.c_str(), d.sample_index, d.step_index, d.iou, d.auc,
                      d.sim, d.mae, d.pred_steps, d.gt_steps);
        os << line;
    }
    write_file_atomic(path, os.str());
}

}  // namespace seqsplat::metrics
