// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// The three neural components: point encoder over Gaussian attributes, a
// decoder-only planner that emits text interleaved with <SEG> triggers, and
// a conditional affordance decoder with multi-scale additive semantic
// fusion. Plus the reconstruction heads used only for pre-training.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "seqsplat/autograd.hpp"
#include "seqsplat/lift.hpp"
#include "seqsplat/scene.hpp"

namespace seqsplat::model {

class Vocabulary {
public:
    static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3, kSeg = 4;
    static constexpr int kReserved = 5;

    Vocabulary();
    // lowercase, whitespace/punctuation split, frequency-sorted with
    // lexicographic ties
    static Vocabulary build(const std::vector<std::string>& corpus);
    static std::vector<std::string> tokenize(const std::string& text);

    size_t size() const { return tokens_.size(); }
    int id(const std::string& token) const;  // kUnk when unknown
    const std::string& token(int id) const;
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

struct EncoderConfig {
    size_t d_model = 128;
    size_t hidden = 64;
};

struct PlannerConfig {
    size_t layers = 2;
    size_t heads = 4;
    size_t d_model = 128;
    size_t context = 96;
    double dropout = 0.0;
};

struct DecoderConfig {
    size_t scales = 2;
    size_t d_model = 128;  // must match the encoder output width
};

struct ModelConfig {
    EncoderConfig encoder;
    PlannerConfig planner;
    DecoderConfig decoder;
    size_t d_sem = 16;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct SegOutput {
    ag::Tensor token_logits;             // L_out x V at the output positions
    std::vector<ag::Tensor> seg_states;  // final-layer hidden at each <SEG>
    std::vector<size_t> seg_positions;   // positions within the full token array
    std::vector<int> output_ids;         // gold (teacher) or emitted (greedy)
    std::string decoded_text;            // greedy only
};

class SeqSplatModel {
public:
    // encoder + mask encoder + reconstruction head, no vocabulary needed
    static SeqSplatModel perception(const ModelConfig& cfg, uint64_t seed);
    // the full model; encoder parameters are drawn first so a fixed seed
    // gives the same encoder init as the perception-only variant
    static SeqSplatModel full(const ModelConfig& cfg, Vocabulary vocab, uint64_t seed);

    // input per primitive: (position normalized to the unit bounding
    // sphere, quaternion, scale); output F_geo (N x d)
    ag::Tensor encode_scene(const scene::GaussianScene& scn) const;

    // score-weighted mean of F_geo rows, then an MLP; rejects all-zero masks
    ag::Tensor encode_mask(const scene::AffordanceMask& mask, const ag::Tensor& f_geo) const;

    // e_mask attends over F_geo; per-point logits from [F_geo_i ; F_fused]
    ag::Tensor reconstruct_mask(const ag::Tensor& e_mask, const ag::Tensor& f_geo) const;

    SegOutput plan_teacher_forced(const std::vector<int>& instruction_ids,
                                  const std::vector<int>& gold_output_ids) const;
    SegOutput plan_greedy(const std::vector<int>& instruction_ids, size_t max_steps = 8,
                          size_t max_tokens = 96) const;

    // per scale: K = V = pointfeats + Proj(F_sem); query refined by
    // cross-attention + MLP residual; logits_i = <q, W_mask pointfeats_i>
    ag::Tensor decode_affordance(const ag::Tensor& h_seg, const ag::Tensor& f_geo,
                                 const lift::FeatureBank& f_sem) const;

    enum class Mode { Teacher, Greedy };
    struct SequenceForward {
        SegOutput plan;
        std::vector<ag::Tensor> mask_logits;
    };
    SequenceForward forward_sequence(const scene::AffordanceSequence& sample,
                                     const scene::GaussianScene& scn,
                                     const lift::FeatureBank& f_sem, Mode mode) const;

    std::vector<int> encode_instruction(const std::string& text) const;
    // step texts each followed by <SEG>, closed with <EOS>
    std::vector<int> gold_output_ids(const scene::AffordanceSequence& sample) const;

    ag::ParameterStore& params() { return params_; }
    const ag::ParameterStore& params() const { return params_; }
    const Vocabulary& vocab() const { return vocab_; }
    const ModelConfig& config() const { return cfg_; }
    bool has_planner() const { return has_planner_; }
    void set_train_mode(bool on) { train_mode_ = on; }

private:
    SeqSplatModel(const ModelConfig& cfg, uint64_t seed);

    void register_perception(RngStream& rng);
    void register_planner_and_decoder(RngStream& rng);

    ag::Tensor lin(const std::string& name, const ag::Tensor& x, bool bias = true) const;
    // full planner forward; returns final-layer hidden (L x d) and logits (L x V)
    std::pair<ag::Tensor, ag::Tensor> planner_forward(const std::vector<int>& ids) const;

    ModelConfig cfg_;
    Vocabulary vocab_;
    ag::ParameterStore params_;
    bool has_planner_ = false;
    bool train_mode_ = false;
    mutable RngStream dropout_rng_;
};

}  // namespace seqsplat::model
