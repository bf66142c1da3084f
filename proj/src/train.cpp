// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/train.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "seqsplat/evaluate.hpp"
#include "seqsplat/metrics.hpp"
#include "seqsplat/util.hpp"

namespace seqsplat::train {

using json = nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> sigmoid_values(const ag::Tensor& logits) {
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double x = logits.at(i);
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1 || pretrain_epochs < 1)
        throw std::runtime_error("train config: epochs must be positive");
    if (lr <= 0.0 || lr_final <= 0.0)
        throw std::runtime_error("train config: learning rate must be positive");
    if (lambda_mask < 0.0)
        throw std::runtime_error("train config: lambda_mask must be >= 0");
    if (batch < 1)
        throw std::runtime_error("train config: batch must be >= 1");
    model.validate();
}

ag::Tensor mask_loss(const ag::Tensor& logits, const scene::AffordanceMask& gt) {
    if (logits.size() != gt.size())
        throw std::runtime_error("mask_loss: length mismatch");
    ag::Tensor target = ag::Tensor::from({gt.size()}, gt.scores);
    ag::Tensor bce = ag::bce_with_logits(logits, target);
    ag::Tensor dice = ag::dice_loss(ag::sigmoid(logits), target);
    return ag::add(bce, dice);
}

ag::Tensor total_loss(const ag::Tensor& token_logits, const std::vector<int>& gold_ids,
                      const std::vector<ag::Tensor>& mask_logits,
                      const std::vector<const scene::AffordanceMask*>& gt_masks,
                      double lambda_mask) {
    if (mask_logits.size() != gt_masks.size())
        throw std::runtime_error("total_loss: mask count mismatch (" +
                                 std::to_string(mask_logits.size()) + " predictions, " +
                                 std::to_string(gt_masks.size()) + " ground truths)");
    ag::Tensor lang =
        ag::cross_entropy(token_logits, gold_ids, model::Vocabulary::kPad);
    if (mask_logits.empty() || lambda_mask == 0.0)
        return lang;
    ag::Tensor mask_sum = mask_loss(mask_logits[0], *gt_masks[0]);
    for (size_t t = 1; t < mask_logits.size(); ++t)
        mask_sum = ag::add(mask_sum, mask_loss(mask_logits[t], *gt_masks[t]));
    return ag::add(lang, ag::mulc(mask_sum, lambda_mask));
}

void write_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "epoch\tlang\tmask\ttotal\twall_s\n";
    for (const auto& e : log) {
        char line[160];
        std::snprintf(line, sizeof(line), "%zu\t%.6f\t%.6f\t%.6f\t%.3f\n", e.epoch, e.lang,
                      e.mask, e.total, e.wall_s);
        os << line;
    }
    write_file_atomic(path, os.str());
}

lift::FeatureBank scene_bank(const scene::GaussianScene& scn, bool features_on,
                             size_t d_sem, const lift::LiftOptions& opts) {
    if (!features_on)
        return lift::FeatureBank::zeros(static_cast<uint32_t>(scn.size()),
                                        static_cast<uint32_t>(d_sem));
    lift::ProceduralFeatureizer feat;
    if (static_cast<size_t>(feat.dim()) != d_sem)
        throw std::runtime_error("scene_bank: model d_sem " + std::to_string(d_sem) +
                                 " does not match featureizer dim " +
                                 std::to_string(feat.dim()));
    return lift::lift_pipeline(scn, feat, opts);
}

// --- pre-training -----------------------------------------------------------

PretrainResult run_pretrain(const data::Dataset& dataset, const TrainConfig& cfg,
                            const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    struct Pair {
        size_t entry;
        const scene::AffordanceMask* mask;
    };
    std::vector<Pair> pairs;
    for (size_t i : dataset.split_indices("train"))
        for (const auto& seq : dataset.entries[i].sequences)
            for (const auto& step : seq.steps)
                pairs.push_back({i, &step.mask});
    if (pairs.empty())
        throw std::runtime_error("run_pretrain: no (scene, mask) pairs in the train split");

    auto m = model::SeqSplatModel::perception(cfg.model, cfg.seed);
    ag::AdamState adam;
    RngStream shuffle_rng(cfg.seed, "pretrain.shuffle");

    PretrainResult result;
    auto t0 = std::chrono::steady_clock::now();
    for (size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        shuffle_rng.shuffle(pairs);
        double epoch_loss = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < pairs.size(); start += cfg.batch) {
            size_t end = std::min(start + cfg.batch, pairs.size());
            m.params().zero_grad();
            std::map<size_t, ag::Tensor> geo_cache;
            ag::Tensor batch_sum;
            for (size_t k = start; k < end; ++k) {
                auto it = geo_cache.find(pairs[k].entry);
                if (it == geo_cache.end())
                    it = geo_cache
                             .emplace(pairs[k].entry,
                                      m.encode_scene(dataset.entries[pairs[k].entry].scn))
                             .first;
                ag::Tensor e = m.encode_mask(*pairs[k].mask, it->second);
                ag::Tensor logits = m.reconstruct_mask(e, it->second);
                ag::Tensor loss = mask_loss(logits, *pairs[k].mask);
                batch_sum = batch_sum.defined() ? ag::add(batch_sum, loss) : loss;
            }
            ag::Tensor batch_loss =
                ag::mulc(batch_sum, 1.0 / static_cast<double>(end - start));
            ag::backward(batch_loss);
            ag::adam_step(m.params(), adam, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
            epoch_loss += batch_loss.item();
            ++batches;
        }
        result.log.push_back({epoch + 1, 0.0, epoch_loss / batches,
                              epoch_loss / batches, seconds_since(t0)});
    }

    // reconstruction quality on the training masks
    {
        ag::NoGradGuard ng;
        double iou_sum = 0.0;
        std::map<size_t, ag::Tensor> geo_cache;
        for (const auto& p : pairs) {
            auto it = geo_cache.find(p.entry);
            if (it == geo_cache.end())
                it = geo_cache
                         .emplace(p.entry, m.encode_scene(dataset.entries[p.entry].scn))
                         .first;
            ag::Tensor logits = m.reconstruct_mask(m.encode_mask(*p.mask, it->second),
                                                   it->second);
            iou_sum += metrics::iou(sigmoid_values(logits), p.mask->scores);
        }
        result.train_miou = iou_sum / static_cast<double>(pairs.size());
    }

    result.checkpoint = out_dir / "pretrain.ssck";
    m.params().save(result.checkpoint);
    write_log(result.log, out_dir / "pretrain_log.tsv");
    return result;
}

// --- end-to-end training ------------------------------------------------------

TrainResult run_train(const data::Dataset& dataset, const TrainConfig& cfg,
                      const std::filesystem::path& out_dir,
                      const std::filesystem::path& init_checkpoint, bool features_on) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    auto train_entries = dataset.split_indices("train");
    if (train_entries.empty())
        throw std::runtime_error("run_train: empty train split");

    model::Vocabulary vocab = model::Vocabulary::build(dataset.corpus("train"));
    auto m = model::SeqSplatModel::full(cfg.model, vocab, cfg.seed);
    if (!init_checkpoint.empty())
        m.params().load(init_checkpoint, "encoder.");
    m.set_train_mode(true);

    lift::LiftOptions lift_opts = cfg.lift;
    if (features_on && lift_opts.cache_dir.empty())
        lift_opts.cache_dir = out_dir / "lift_cache";
    std::map<size_t, lift::FeatureBank> banks;
    for (size_t i : train_entries)
        banks.emplace(i, scene_bank(dataset.entries[i].scn, features_on, cfg.model.d_sem,
                                    lift_opts));

    struct Item {
        size_t entry;
        size_t seq;
    };
    std::vector<Item> items;
    for (size_t i : train_entries)
        for (size_t s = 0; s < dataset.entries[i].sequences.size(); ++s)
            items.push_back({i, s});

    ag::AdamState adam;
    RngStream shuffle_rng(cfg.seed, "train.shuffle");
    size_t steps_per_epoch = (items.size() + cfg.batch - 1) / cfg.batch;
    size_t total_steps = steps_per_epoch * cfg.epochs;
    size_t step_index = 0;

    TrainResult result;
    auto t0 = std::chrono::steady_clock::now();
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(items);
        double epoch_lang = 0.0, epoch_mask = 0.0, epoch_total = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < items.size(); start += cfg.batch) {
            size_t end = std::min(start + cfg.batch, items.size());
            m.params().zero_grad();
            std::map<size_t, ag::Tensor> geo_cache;
            ag::Tensor batch_sum;
            double lang_acc = 0.0, mask_acc = 0.0;
            for (size_t k = start; k < end; ++k) {
                const auto& entry = dataset.entries[items[k].entry];
                const auto& sample = entry.sequences[items[k].seq];
                auto git = geo_cache.find(items[k].entry);
                if (git == geo_cache.end())
                    git = geo_cache.emplace(items[k].entry, m.encode_scene(entry.scn)).first;

                std::vector<int> instr = m.encode_instruction(sample.instruction);
                std::vector<int> gold = m.gold_output_ids(sample);
                model::SegOutput plan = m.plan_teacher_forced(instr, gold);

                std::vector<ag::Tensor> mask_logits;
                std::vector<const scene::AffordanceMask*> gt;
                double mask_sum_item = 0.0;
                if (cfg.lambda_mask > 0.0) {
                    for (size_t t = 0; t < plan.seg_states.size(); ++t) {
                        mask_logits.push_back(m.decode_affordance(
                            plan.seg_states[t], git->second, banks.at(items[k].entry)));
                        gt.push_back(&sample.steps[t].mask);
                        mask_sum_item +=
                            mask_loss(mask_logits.back(), sample.steps[t].mask).item();
                    }
                }
                ag::Tensor loss =
                    total_loss(plan.token_logits, gold, mask_logits, gt, cfg.lambda_mask);
                lang_acc += loss.item() - cfg.lambda_mask * mask_sum_item;
                mask_acc += mask_sum_item;
                batch_sum = batch_sum.defined() ? ag::add(batch_sum, loss) : loss;
            }
            ag::Tensor batch_loss =
                ag::mulc(batch_sum, 1.0 / static_cast<double>(end - start));
            ag::backward(batch_loss);
            double progress = total_steps > 1
                                  ? static_cast<double>(step_index) /
                                        static_cast<double>(total_steps - 1)
                                  : 0.0;
            double lr = cfg.lr_final +
                        0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(M_PI * progress));
            ag::adam_step(m.params(), adam, lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
            ++step_index;

            epoch_lang += lang_acc / static_cast<double>(end - start);
            epoch_total += batch_loss.item();
            epoch_mask += mask_acc / static_cast<double>(end - start);
            ++batches;
        }
        result.log.push_back({epoch + 1, epoch_lang / batches, epoch_mask / batches,
                              epoch_total / batches, seconds_since(t0)});
    }
    m.set_train_mode(false);

    // teacher-forced token accuracy and greedy <SEG>-count agreement
    {
        ag::NoGradGuard ng;
        size_t correct = 0, total = 0, seg_match = 0, n_seq = 0;
        for (const auto& item : items) {
            const auto& entry = dataset.entries[item.entry];
            const auto& sample = entry.sequences[item.seq];
            std::vector<int> instr = m.encode_instruction(sample.instruction);
            std::vector<int> gold = m.gold_output_ids(sample);
            model::SegOutput plan = m.plan_teacher_forced(instr, gold);
            const size_t v = vocab.size();
            for (size_t k = 0; k < gold.size(); ++k) {
                const double* row = plan.token_logits.data() + k * v;
                int best = 0;
                for (size_t j = 1; j < v; ++j)
                    if (row[j] > row[best])
                        best = static_cast<int>(j);
                correct += best == gold[k];
                ++total;
            }
            model::SegOutput greedy = m.plan_greedy(instr);
            seg_match += greedy.seg_states.size() == sample.steps.size();
            ++n_seq;
        }
        result.token_accuracy = static_cast<double>(correct) / static_cast<double>(total);
        result.seg_count_match =
            static_cast<double>(seg_match) / static_cast<double>(n_seq);
    }

    save_model_bundle(m, features_on, out_dir);
    write_log(result.log, out_dir / "train_log.tsv");
    result.checkpoint_dir = out_dir;
    return result;
}

// --- bundles -------------------------------------------------------------------

void save_model_bundle(const model::SeqSplatModel& m, bool features_on,
                       const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    m.params().save(dir / "params.ssck");
    m.vocab().save(dir / "vocab.json");
    write_file_atomic(dir / "model_config.json", m.config().to_json());
    json meta;
    meta["features_on"] = features_on;
    write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

model::SeqSplatModel load_model_bundle(const std::filesystem::path& dir) {
    model::ModelConfig cfg =
        model::ModelConfig::from_json(read_text_file(dir / "model_config.json"));
    model::Vocabulary vocab = model::Vocabulary::load(dir / "vocab.json");
    auto m = model::SeqSplatModel::full(cfg, std::move(vocab), 0);
    m.params().load(dir / "params.ssck");
    return m;
}

bool bundle_features_on(const std::filesystem::path& dir) {
    json meta = json::parse(read_text_file(dir / "meta.json"));
    return meta.at("features_on").get<bool>();
}

// --- ablation -------------------------------------------------------------------

AblationReport run_ablation(const data::Dataset& dataset, const TrainConfig& cfg,
                            const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    std::filesystem::path pretrain_ckpt;

    AblationReport report;
    const bool grid[4][2] = {{false, false}, {false, true}, {true, false}, {true, true}};
    std::string eval_split = dataset.split_indices("val").empty() ? "train" : "val";
    for (int row = 0; row < 4; ++row) {
        bool with_pretrain = grid[row][0];
        bool with_features = grid[row][1];
        if (with_pretrain && pretrain_ckpt.empty())
            pretrain_ckpt =
                run_pretrain(dataset, cfg, out_dir / "ablation_pretrain").checkpoint;
        auto run_dir = out_dir / ("ablation_row" + std::to_string(row));
        run_train(dataset, cfg, run_dir, with_pretrain ? pretrain_ckpt : "",
                  with_features);
        auto m = load_model_bundle(run_dir);
        auto rep = metrics::evaluate(m, dataset, eval_split, metrics::Setting::Seq,
                                     with_features, cfg.lift);
        report.rows.push_back(
            {with_pretrain, with_features, rep.miou, rep.mauc, rep.msim, rep.mmae});
    }
    write_ablation(report, out_dir / "ablation.tsv");
    return report;
}

void write_ablation(const AblationReport& report, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "pretrain\tfeatures\tsIoU\tsAUC\tsSIM\tsMAE\n";
    for (const auto& r : report.rows) {
        char line[128];
        std::snprintf(line, sizeof(line), "%s\t%s\t%.4f\t%.4f\t%.4f\t%.4f\n",
                      r.pretrain ? "on" : "off", r.features ? "on" : "off", r.siou, r.sauc,
                      r.ssim, r.smae);
        os << line;
    }
    write_file_atomic(path, os.str());
}

}  // namespace seqsplat::train
