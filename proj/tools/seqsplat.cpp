// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Single entry point for the full pipeline: dataset generation, the two
// training stages, evaluation, the ablation grid, rendering, feature
// lifting, and model-free metric scoring.

#include <CLI11.hpp>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>

#include "seqsplat/datagen.hpp"
#include "seqsplat/dataset.hpp"
#include "seqsplat/evaluate.hpp"
#include "seqsplat/lift.hpp"
#include "seqsplat/raster.hpp"
#include "seqsplat/train.hpp"
#include "seqsplat/util.hpp"

using json = nlohmann::json;
using namespace seqsplat;

namespace {

struct RunConfig {
    uint64_t seed = 0;
    datagen::DatasetConfig data;
    train::TrainConfig train;
    std::string eval_setting;  // optional default for --setting
};

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw std::runtime_error("config: unknown key '" + where + key + "'");
}

RunConfig parse_config(const json& doc) {
    RunConfig cfg;
    check_keys(doc, {"seed", "data", "model", "train", "eval", "lift"}, "");
    cfg.seed = doc.value("seed", uint64_t{0});

    if (doc.contains("data")) {
        const json& d = doc.at("data");
        check_keys(d, {"scenes", "split_ratio", "min_objects", "max_objects",
                       "max_sequences"},
                   "data.");
        cfg.data.scenes = d.value("scenes", cfg.data.scenes);
        cfg.data.split_ratio = d.value("split_ratio", cfg.data.split_ratio);
        cfg.data.scene_gen.min_objects =
            d.value("min_objects", cfg.data.scene_gen.min_objects);
        cfg.data.scene_gen.max_objects =
            d.value("max_objects", cfg.data.scene_gen.max_objects);
        cfg.data.scene_gen.max_sequences =
            d.value("max_sequences", cfg.data.scene_gen.max_sequences);
    }
    if (doc.contains("model")) {
        const json& m = doc.at("model");
        check_keys(m,
                   {"d_model", "enc_hidden", "planner_layers", "planner_heads",
                    "planner_d_model", "context", "dropout", "decoder_scales", "d_sem"},
                   "model.");
        auto& mc = cfg.train.model;
        mc.encoder.d_model = m.value("d_model", mc.encoder.d_model);
        mc.decoder.d_model = mc.encoder.d_model;
        mc.encoder.hidden = m.value("enc_hidden", mc.encoder.hidden);
        mc.planner.layers = m.value("planner_layers", mc.planner.layers);
        mc.planner.heads = m.value("planner_heads", mc.planner.heads);
        mc.planner.d_model = m.value("planner_d_model", mc.planner.d_model);
        mc.planner.context = m.value("context", mc.planner.context);
        mc.planner.dropout = m.value("dropout", mc.planner.dropout);
        mc.decoder.scales = m.value("decoder_scales", mc.decoder.scales);
        mc.d_sem = m.value("d_sem", mc.d_sem);
    }
    if (doc.contains("train")) {
        const json& t = doc.at("train");
        check_keys(t,
                   {"pretrain_epochs", "epochs", "lr", "lr_final", "lambda_mask", "batch",
                    "weight_decay"},
                   "train.");
        cfg.train.pretrain_epochs = t.value("pretrain_epochs", cfg.train.pretrain_epochs);
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.lr = t.value("lr", cfg.train.lr);
        cfg.train.lr_final = t.value("lr_final", cfg.train.lr_final);
        cfg.train.lambda_mask = t.value("lambda_mask", cfg.train.lambda_mask);
        cfg.train.batch = t.value("batch", cfg.train.batch);
        cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    }
    if (doc.contains("eval")) {
        const json& e = doc.at("eval");
        check_keys(e, {"setting"}, "eval.");
        cfg.eval_setting = e.value("setting", cfg.eval_setting);
    }
    if (doc.contains("lift")) {
        const json& l = doc.at("lift");
        check_keys(l, {"views", "resolution", "background", "cache"}, "lift.");
        cfg.train.lift.views = l.value("views", cfg.train.lift.views);
        cfg.train.lift.resolution = l.value("resolution", cfg.train.lift.resolution);
        if (l.contains("background")) {
            auto bg = l.at("background").get<std::vector<double>>();
            if (bg.size() != 3)
                throw std::runtime_error("config: lift.background needs 3 components");
            cfg.train.lift.background = {bg[0], bg[1], bg[2]};
        }
        if (l.contains("cache"))
            cfg.train.lift.cache_dir = l.at("cache").get<std::string>();
    }
    return cfg;
}

json config_to_json(const RunConfig& cfg) {
    json doc;
    doc["seed"] = cfg.seed;
    doc["data"] = {{"scenes", cfg.data.scenes},
                   {"split_ratio", cfg.data.split_ratio},
                   {"min_objects", cfg.data.scene_gen.min_objects},
                   {"max_objects", cfg.data.scene_gen.max_objects},
                   {"max_sequences", cfg.data.scene_gen.max_sequences}};
    const auto& mc = cfg.train.model;
    doc["model"] = {{"d_model", mc.encoder.d_model},
                    {"enc_hidden", mc.encoder.hidden},
                    {"planner_layers", mc.planner.layers},
                    {"planner_heads", mc.planner.heads},
                    {"planner_d_model", mc.planner.d_model},
                    {"context", mc.planner.context},
                    {"dropout", mc.planner.dropout},
                    {"decoder_scales", mc.decoder.scales},
                    {"d_sem", mc.d_sem}};
    doc["train"] = {{"pretrain_epochs", cfg.train.pretrain_epochs},
                    {"epochs", cfg.train.epochs},
                    {"lr", cfg.train.lr},
                    {"lr_final", cfg.train.lr_final},
                    {"lambda_mask", cfg.train.lambda_mask},
                    {"batch", cfg.train.batch},
                    {"weight_decay", cfg.train.weight_decay}};
    if (!cfg.eval_setting.empty())
        doc["eval"] = {{"setting", cfg.eval_setting}};
    doc["lift"] = {{"views", cfg.train.lift.views},
                   {"resolution", cfg.train.lift.resolution},
                   {"background",
                    {cfg.train.lift.background.x(), cfg.train.lift.background.y(),
                     cfg.train.lift.background.z()}}};
    return doc;
}

RunConfig load_run_config(const std::string& config_path, uint64_t seed_flag,
                          bool seed_given) {
    RunConfig cfg;
    if (!config_path.empty())
        cfg = parse_config(json::parse(read_text_file(config_path)));
    if (seed_given)
        cfg.seed = seed_flag;  // flags win over the config file
    cfg.data.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    return cfg;
}

void echo_config(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_file_atomic(out_dir / "config.resolved.json",
                      config_to_json(cfg).dump(2) + "\n");
}

// annotation doc -> per-sample mask sequences
std::vector<std::vector<scene::AffordanceMask>> sequences_of(
    const scene::AnnotationDoc& doc) {
    std::vector<std::vector<scene::AffordanceMask>> out;
    for (const auto& sample : doc.samples) {
        std::vector<scene::AffordanceMask> seq;
        for (const auto& step : sample.steps)
            seq.push_back(step.mask);
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"seqsplat: sequential 3D Gaussian affordance reasoning toolkit"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_path, checkpoint_path, init_path;
    std::string setting = "", features = "on";
    std::string scene_path, pred_path, gt_path, weights_path, cache_path;
    uint64_t seed_flag = 0;
    bool seed_given = false;
    size_t views = 8;
    int resolution = 256;
    size_t view_index = 0;

    auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
        cmd->add_option("--config", config_path, "JSON run configuration file");
        auto* s = cmd->add_option("--seed", seed_flag, "run seed (overrides config)")
                      ->capture_default_str();
        cmd->parse_complete_callback([&, s] { seed_given = s->count() > 0; });
        if (needs_out)
            cmd->add_option("--out", out_path, "output directory")->required();
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen);

    auto* pre = app.add_subcommand("pretrain", "conditional geometric reconstruction");
    add_common(pre);
    pre->add_option("--data", data_path, "dataset manifest.json")->required();

    auto* trn = app.add_subcommand("train", "end-to-end sequential training");
    add_common(trn);
    trn->add_option("--data", data_path, "dataset manifest.json")->required();
    trn->add_option("--init", init_path, "pre-training checkpoint (.ssck)");
    trn->add_option("--features", features, "semantic feature injection")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();

    auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(evl);
    evl->add_option("--data", data_path, "dataset manifest.json")->required();
    evl->add_option("--checkpoint", checkpoint_path, "checkpoint bundle directory")
        ->required();
    evl->add_option("--setting", setting, "single|seq_gt|seq")
        ->check(CLI::IsMember({"single", "seq_gt", "seq"}));

    auto* abl = app.add_subcommand("ablate", "pretrain x features ablation grid");
    add_common(abl);
    abl->add_option("--data", data_path, "dataset manifest.json")->required();

    auto* rnd = app.add_subcommand("render", "render a scene view to PPM");
    rnd->add_option("--scene", scene_path, "scene PLY file")->required();
    rnd->add_option("--out", out_path, "output image (.ppm)")->required();
    rnd->add_option("--views", views, "ring camera count")->capture_default_str();
    rnd->add_option("--view-index", view_index, "which ring camera")->capture_default_str();
    rnd->add_option("--res", resolution, "image resolution")->capture_default_str();
    rnd->add_option("--weights", weights_path, "also dump SSWT weight records");

    auto* lft = app.add_subcommand("lift", "lift 2D features into a per-Gaussian bank");
    lft->add_option("--scene", scene_path, "scene PLY file")->required();
    lft->add_option("--out", out_path, "output bank (.ssfb)")->required();
    lft->add_option("--views", views, "ring camera count")->capture_default_str();
    lft->add_option("--res", resolution, "render resolution")->capture_default_str();
    lft->add_option("--cache", cache_path, "bank cache directory");

    auto* met = app.add_subcommand("metrics",
                                   "score a prediction dump against annotations");
    met->add_option("--pred", pred_path, "prediction annotation JSON")->required();
    met->add_option("--gt", gt_path, "ground-truth annotation JSON")->required();
    met->add_option("--out", out_path, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            RunConfig cfg = load_run_config(config_path, seed_flag, seed_given);
            echo_config(cfg, out_path);
            auto manifest = datagen::emit_dataset(cfg.data, out_path);
            std::cout << "gen-data: " << manifest.n_scenes << " scenes ("
                      << manifest.n_train << " train / " << manifest.n_val << " val), "
                      << manifest.n_sequences << " sequences, " << manifest.n_masks
                      << " masks, hash " << manifest.content_hash << "\n";
        } else if (*pre) {
            RunConfig cfg = load_run_config(config_path, seed_flag, seed_given);
            echo_config(cfg, out_path);
            auto dataset = data::Dataset::load(data_path);
            auto result = train::run_pretrain(dataset, cfg.train, out_path);
            std::cout << "pretrain: final mask loss " << result.log.back().mask
                      << ", reconstruction mIoU " << result.train_miou << " -> "
                      << result.checkpoint.string() << "\n";
        } else if (*trn) {
            RunConfig cfg = load_run_config(config_path, seed_flag, seed_given);
            echo_config(cfg, out_path);
            auto dataset = data::Dataset::load(data_path);
            auto result = train::run_train(dataset, cfg.train, out_path, init_path,
                                           features == "on");
            std::cout << "train: token accuracy " << result.token_accuracy
                      << ", seg-count match " << result.seg_count_match << " -> "
                      << result.checkpoint_dir.string() << "\n";
        } else if (*evl) {
            RunConfig cfg = load_run_config(config_path, seed_flag, seed_given);
            if (setting.empty())
                setting = cfg.eval_setting;
            if (setting.empty())
                throw std::runtime_error("eval: --setting required (single|seq_gt|seq)");
            echo_config(cfg, out_path);
            auto dataset = data::Dataset::load(data_path);
            auto m = train::load_model_bundle(checkpoint_path);
            bool feats = train::bundle_features_on(checkpoint_path);
            lift::LiftOptions lift_opts = cfg.train.lift;
            if (lift_opts.cache_dir.empty())
                lift_opts.cache_dir = std::filesystem::path(out_path) / "lift_cache";
            std::string split = dataset.split_indices("val").empty() ? "train" : "val";
            auto report = metrics::evaluate(m, dataset, split,
                                            metrics::setting_from_string(setting), feats,
                                            lift_opts);
            metrics::write_report(report, std::filesystem::path(out_path) / "report.tsv");
            metrics::write_details(report, std::filesystem::path(out_path) / "details.tsv");
            std::cout << "eval " << setting << " on " << split << ": mIoU/sIoU "
                      << report.miou << ", AUC/sAUC " << report.mauc << ", SIM/sSIM "
                      << report.msim << ", MAE/sMAE " << report.mmae << " ("
                      << report.n_samples << " samples)\n";
        } else if (*abl) {
            RunConfig cfg = load_run_config(config_path, seed_flag, seed_given);
            echo_config(cfg, out_path);
            auto dataset = data::Dataset::load(data_path);
            auto report = train::run_ablation(dataset, cfg.train, out_path);
            std::cout << "ablate: " << report.rows.size() << " rows written to "
                      << (std::filesystem::path(out_path) / "ablation.tsv").string()
                      << "\n";
        } else if (*rnd) {
            auto scn = scene::load_scene(scene_path);
            auto cams = raster::default_view_ring(scn, views, resolution, resolution);
            if (view_index >= cams.size())
                throw std::runtime_error("render: view index out of range");
            auto img = raster::render_rgb(scn, cams[view_index]);
            raster::save_ppm(img, out_path);
            if (!weights_path.empty())
                raster::save_weights(raster::render_weights(scn, cams[view_index]),
                                     weights_path);
            std::cout << "render: wrote " << out_path << "\n";
        } else if (*lft) {
            auto scn = scene::load_scene(scene_path);
            lift::LiftOptions opts;
            opts.views = views;
            opts.resolution = resolution;
            if (!cache_path.empty())
                opts.cache_dir = cache_path;
            lift::ProceduralFeatureizer feat;
            auto bank = lift::lift_pipeline(scn, feat, opts);
            bank.save(out_path);
            std::cout << "lift: N=" << bank.n << " d=" << bank.d << " -> " << out_path
                      << "\n";
        } else if (*met) {
            auto gt_doc = scene::load_annotations(gt_path);
            size_t n = 0;
            for (const auto& s : gt_doc.samples)
                for (const auto& st : s.steps)
                    n = std::max(n, st.mask.size());
            auto pred_doc = scene::load_annotations(pred_path, n);
            auto report =
                metrics::score_predictions(sequences_of(pred_doc), sequences_of(gt_doc));
            std::filesystem::create_directories(out_path);
            metrics::write_report(report, std::filesystem::path(out_path) / "report.tsv");
            metrics::write_details(report, std::filesystem::path(out_path) / "details.tsv");
            std::cout << "metrics: sIoU " << report.miou << ", sAUC " << report.mauc
                      << ", sSIM " << report.msim << ", sMAE " << report.mmae << " ("
                      << report.n_samples << " samples)\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "seqsplat: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
