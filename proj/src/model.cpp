// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "seqsplat/util.hpp"

namespace seqsplat::model {

using json = nlohmann::json;

// --- Vocabulary ---

namespace {
const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> r = {"<pad>", "<bos>", "<eos>", "<unk>", "<seg>"};
    return r;
}
}  // namespace

Vocabulary::Vocabulary() {
    tokens_ = reserved_tokens();
    for (size_t i = 0; i < tokens_.size(); ++i)
        index_[tokens_[i]] = static_cast<int>(i);
}

std::vector<std::string> Vocabulary::tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty())
        out.push_back(cur);
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
    std::map<std::string, size_t> counts;
    for (const auto& text : corpus)
        for (const auto& tok : tokenize(text))
            ++counts[tok];
    std::vector<std::pair<std::string, size_t>> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second)
            return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [tok, count] : sorted) {
        v.index_[tok] = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(tok);
    }
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int i) const {
    if (i < 0 || static_cast<size_t>(i) >= tokens_.size())
        throw std::runtime_error("vocabulary: id out of range: " + std::to_string(i));
    return tokens_[static_cast<size_t>(i)];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
    std::vector<int> out;
    for (const auto& tok : tokenize(text))
        out.push_back(id(tok));
    return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int i : ids) {
        if (i == kPad || i == kBos)
            continue;
        if (!out.empty())
            out.push_back(' ');
        out += token(i);
    }
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    json doc;
    doc["tokens"] = tokens_;
    write_file_atomic(path, doc.dump(2) + "\n");
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    json doc = json::parse(read_text_file(path));
    Vocabulary v;
    v.tokens_ = doc.at("tokens").get<std::vector<std::string>>();
    if (v.tokens_.size() < kReserved)
        throw std::runtime_error("vocabulary file too small: " + path.string());
    for (int i = 0; i < kReserved; ++i)
        if (v.tokens_[static_cast<size_t>(i)] != reserved_tokens()[static_cast<size_t>(i)])
            throw std::runtime_error("vocabulary reserved ids corrupted in " +
                                     path.string());
    v.index_.clear();
    for (size_t i = 0; i < v.tokens_.size(); ++i)
        v.index_[v.tokens_[i]] = static_cast<int>(i);
    return v;
}

// --- config ---

void ModelConfig::validate() const {
    if (planner.d_model % planner.heads != 0)
        throw std::runtime_error("model config: planner d_model must be divisible by heads");
    if (decoder.d_model != encoder.d_model)
        throw std::runtime_error(
            "model config: decoder d_model must match encoder d_model");
    if (decoder.scales < 1)
        throw std::runtime_error("model config: decoder needs at least one scale");
    if (planner.context < 4)
        throw std::runtime_error("model config: context cap too small");
}

std::string ModelConfig::to_json() const {
    json doc;
    doc["encoder"] = {{"d_model", encoder.d_model}, {"hidden", encoder.hidden}};
    doc["planner"] = {{"layers", planner.layers},
                      {"heads", planner.heads},
                      {"d_model", planner.d_model},
                      {"context", planner.context},
                      {"dropout", planner.dropout}};
    doc["decoder"] = {{"scales", decoder.scales}, {"d_model", decoder.d_model}};
    doc["d_sem"] = d_sem;
    return doc.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json doc = json::parse(text);
    ModelConfig cfg;
    cfg.encoder.d_model = doc.at("encoder").at("d_model").get<size_t>();
    cfg.encoder.hidden = doc.at("encoder").at("hidden").get<size_t>();
    cfg.planner.layers = doc.at("planner").at("layers").get<size_t>();
    cfg.planner.heads = doc.at("planner").at("heads").get<size_t>();
    cfg.planner.d_model = doc.at("planner").at("d_model").get<size_t>();
    cfg.planner.context = doc.at("planner").at("context").get<size_t>();
    cfg.planner.dropout = doc.at("planner").at("dropout").get<double>();
    cfg.decoder.scales = doc.at("decoder").at("scales").get<size_t>();
    cfg.decoder.d_model = doc.at("decoder").at("d_model").get<size_t>();
    cfg.d_sem = doc.at("d_sem").get<size_t>();
    cfg.validate();
    return cfg;
}

// --- model ---

SeqSplatModel::SeqSplatModel(const ModelConfig& cfg, uint64_t seed)
    : cfg_(cfg), dropout_rng_(seed, "dropout") {
    cfg_.validate();
}

namespace {

void reg_linear(ag::ParameterStore& store, RngStream& rng, const std::string& name,
                size_t in, size_t out, bool bias = true) {
    double stddev = std::sqrt(1.0 / static_cast<double>(in));
    store.register_parameter(name + ".w", ag::Tensor::randn({in, out}, rng, stddev));
    if (bias)
        store.register_parameter(name + ".b", ag::Tensor::zeros({out}));
}

void reg_layernorm(ag::ParameterStore& store, const std::string& name, size_t d) {
    store.register_parameter(name + ".g", ag::Tensor::full({d}, 1.0));
    store.register_parameter(name + ".b", ag::Tensor::zeros({d}));
}

ag::Tensor layer_norm_affine(const ag::Tensor& x, const ag::Tensor& g,
                             const ag::Tensor& b) {
    return ag::add(ag::mul(ag::layer_norm(x, x.rank() - 1), g), b);
}

}  // namespace

void SeqSplatModel::register_perception(RngStream& rng) {
    const size_t d = cfg_.encoder.d_model, h = cfg_.encoder.hidden;
    reg_linear(params_, rng, "encoder.pp1", 10, h);
    reg_linear(params_, rng, "encoder.pp2", h, d);
    reg_linear(params_, rng, "encoder.post1", 2 * d, d);
    reg_linear(params_, rng, "encoder.post2", d, d);
    reg_linear(params_, rng, "maskenc.fc1", d, d);
    reg_linear(params_, rng, "maskenc.fc2", d, d);
    reg_linear(params_, rng, "recon.fc1", 2 * d, d);
    reg_linear(params_, rng, "recon.fc2", d, 1);
}

void SeqSplatModel::register_planner_and_decoder(RngStream& rng) {
    const size_t dp = cfg_.planner.d_model;
    const size_t dd = cfg_.decoder.d_model;
    const size_t v = vocab_.size();
    params_.register_parameter("planner.tok_emb", ag::Tensor::randn({v, dp}, rng, 0.02));
    params_.register_parameter("planner.pos_emb",
                               ag::Tensor::randn({cfg_.planner.context, dp}, rng, 0.02));
    for (size_t l = 0; l < cfg_.planner.layers; ++l) {
        std::string p = "planner.layer" + std::to_string(l);
        reg_layernorm(params_, p + ".ln1", dp);
        reg_linear(params_, rng, p + ".wq", dp, dp);
        reg_linear(params_, rng, p + ".wk", dp, dp);
        reg_linear(params_, rng, p + ".wv", dp, dp);
        reg_linear(params_, rng, p + ".wo", dp, dp);
        reg_layernorm(params_, p + ".ln2", dp);
        reg_linear(params_, rng, p + ".mlp1", dp, 4 * dp);
        reg_linear(params_, rng, p + ".mlp2", 4 * dp, dp);
    }
    reg_layernorm(params_, "planner.lnf", dp);
    reg_linear(params_, rng, "planner.head", dp, v);

    reg_linear(params_, rng, "decoder.hseg", dp, dd);
    for (size_t s = 0; s < cfg_.decoder.scales; ++s) {
        std::string p = "decoder.scale" + std::to_string(s);
        // bias-free so a zero semantic bank fuses to an exact identity
        reg_linear(params_, rng, p + ".sem", cfg_.d_sem, dd, /*bias=*/false);
        reg_linear(params_, rng, p + ".mlp1", dd, dd);
        reg_linear(params_, rng, p + ".mlp2", dd, dd);
        if (s > 0)
            reg_linear(params_, rng, p + ".trans", dd, dd);
    }
    reg_linear(params_, rng, "decoder.mask_head", dd, dd, /*bias=*/false);
}

SeqSplatModel SeqSplatModel::perception(const ModelConfig& cfg, uint64_t seed) {
    SeqSplatModel m(cfg, seed);
    RngStream rng(seed, "init");
    m.register_perception(rng);
    return m;
}

SeqSplatModel SeqSplatModel::full(const ModelConfig& cfg, Vocabulary vocab, uint64_t seed) {
    SeqSplatModel m(cfg, seed);
    m.vocab_ = std::move(vocab);
    RngStream rng(seed, "init");
    m.register_perception(rng);
    m.register_planner_and_decoder(rng);
    m.has_planner_ = true;
    return m;
}

ag::Tensor SeqSplatModel::lin(const std::string& name, const ag::Tensor& x,
                              bool bias) const {
    bool vector_in = x.rank() == 1;
    ag::Tensor h = vector_in ? ag::reshape(x, {1, x.dim(0)}) : x;
    h = ag::matmul(h, params_.get(name + ".w"));
    if (bias)
        h = ag::add(h, params_.get(name + ".b"));
    if (vector_in)
        h = ag::reshape(h, {h.dim(1)});
    return h;
}

ag::Tensor SeqSplatModel::encode_scene(const scene::GaussianScene& scn) const {
    const size_t n = scn.size();
    if (n == 0)
        throw std::runtime_error("encode_scene: empty scene");
    Eigen::Vector3d lo = scn.primitives[0].position, hi = lo;
    for (const auto& g : scn.primitives) {
        lo = lo.cwiseMin(g.position);
        hi = hi.cwiseMax(g.position);
    }
    Eigen::Vector3d center = 0.5 * (lo + hi);
    double radius = 1e-9;
    for (const auto& g : scn.primitives)
        radius = std::max(radius, (g.position - center).norm());
    double inv_r = 1.0 / radius;

    std::vector<double> input(n * 10);
    for (size_t i = 0; i < n; ++i) {
        const auto& g = scn.primitives[i];
        double* row = input.data() + i * 10;
        Eigen::Vector3d p = (g.position - center) * inv_r;
        row[0] = p.x();
        row[1] = p.y();
        row[2] = p.z();
        row[3] = g.rotation.w();
        row[4] = g.rotation.x();
        row[5] = g.rotation.y();
        row[6] = g.rotation.z();
        row[7] = g.scale.x();
        row[8] = g.scale.y();
        row[9] = g.scale.z();
    }
    ag::Tensor x = ag::Tensor::from({n, 10}, std::move(input));
    ag::Tensor h = ag::gelu(lin("encoder.pp1", x));
    h = ag::gelu(lin("encoder.pp2", h));
    ag::Tensor pooled = ag::max(h, 0);  // (d)
    ag::Tensor tiled = ag::add(ag::Tensor::zeros({n, cfg_.encoder.d_model}), pooled);
    ag::Tensor cat = ag::concat({h, tiled}, 1);
    ag::Tensor f = ag::gelu(lin("encoder.post1", cat));
    return lin("encoder.post2", f);
}

ag::Tensor SeqSplatModel::encode_mask(const scene::AffordanceMask& mask,
                                      const ag::Tensor& f_geo) const {
    if (mask.size() != f_geo.dim(0))
        throw std::runtime_error("encode_mask: mask length does not match F_geo rows");
    double total = 0.0;
    for (double s : mask.scores)
        total += s;
    if (total <= 0.0)
        throw std::runtime_error("encode_mask: all-zero mask has no concept embedding");
    ag::Tensor w = ag::Tensor::from({mask.size()}, mask.scores);
    ag::Tensor pooled = ag::weighted_mean_rows(f_geo, w);
    ag::Tensor e = ag::gelu(lin("maskenc.fc1", pooled));
    return lin("maskenc.fc2", e);
}

ag::Tensor SeqSplatModel::reconstruct_mask(const ag::Tensor& e_mask,
                                           const ag::Tensor& f_geo) const {
    const size_t n = f_geo.dim(0);
    ag::Tensor fused = ag::single_query_attention(e_mask, f_geo, f_geo);
    ag::Tensor tiled = ag::add(ag::Tensor::zeros({n, cfg_.encoder.d_model}), fused);
    ag::Tensor cat = ag::concat({f_geo, tiled}, 1);
    ag::Tensor h = ag::gelu(lin("recon.fc1", cat));
    return ag::reshape(lin("recon.fc2", h), {n});
}

std::pair<ag::Tensor, ag::Tensor> SeqSplatModel::planner_forward(
    const std::vector<int>& ids) const {
    if (!has_planner_)
        throw std::runtime_error("planner not constructed (perception-only model)");
    const size_t l = ids.size();
    const size_t dp = cfg_.planner.d_model;
    if (l == 0)
        throw std::runtime_error("planner: empty token sequence");
    if (l > cfg_.planner.context)
        throw std::runtime_error("planner: sequence length " + std::to_string(l) +
                                 " overflows context cap " +
                                 std::to_string(cfg_.planner.context));
    std::vector<int> pos_ids(l);
    for (size_t i = 0; i < l; ++i)
        pos_ids[i] = static_cast<int>(i);
    ag::Tensor x = ag::add(ag::embedding_lookup(params_.get("planner.tok_emb"), ids),
                           ag::embedding_lookup(params_.get("planner.pos_emb"), pos_ids));

    // causal additive mask: 0 on/below the diagonal, -1e9 above (exp
    // underflows to exactly zero, making suffixes bitwise inert)
    std::vector<double> mvals(l * l, 0.0);
    for (size_t i = 0; i < l; ++i)
        for (size_t j = i + 1; j < l; ++j)
            mvals[i * l + j] = -1e9;
    ag::Tensor causal = ag::Tensor::from({l, l}, std::move(mvals));

    const size_t heads = cfg_.planner.heads;
    const size_t dh = dp / heads;
    const bool use_dropout = train_mode_ && cfg_.planner.dropout > 0.0;
    for (size_t layer = 0; layer < cfg_.planner.layers; ++layer) {
        std::string p = "planner.layer" + std::to_string(layer);
        ag::Tensor h = layer_norm_affine(x, params_.get(p + ".ln1.g"),
                                         params_.get(p + ".ln1.b"));
        ag::Tensor q = lin(p + ".wq", h);
        ag::Tensor k = lin(p + ".wk", h);
        ag::Tensor v = lin(p + ".wv", h);
        std::vector<ag::Tensor> head_outs;
        for (size_t hd = 0; hd < heads; ++hd) {
            ag::Tensor qh = ag::slice(q, 1, hd * dh, dh);
            ag::Tensor kh = ag::slice(k, 1, hd * dh, dh);
            ag::Tensor vh = ag::slice(v, 1, hd * dh, dh);
            head_outs.push_back(ag::attention(qh, kh, vh, causal));
        }
        ag::Tensor att = lin(p + ".wo", ag::concat(head_outs, 1));
        if (use_dropout)
            att = ag::dropout(att, cfg_.planner.dropout, true, dropout_rng_);
        x = ag::add(x, att);
        ag::Tensor h2 = layer_norm_affine(x, params_.get(p + ".ln2.g"),
                                          params_.get(p + ".ln2.b"));
        ag::Tensor m = lin(p + ".mlp2", ag::gelu(lin(p + ".mlp1", h2)));
        if (use_dropout)
            m = ag::dropout(m, cfg_.planner.dropout, true, dropout_rng_);
        x = ag::add(x, m);
    }
    ag::Tensor hidden =
        layer_norm_affine(x, params_.get("planner.lnf.g"), params_.get("planner.lnf.b"));
    ag::Tensor logits = lin("planner.head", hidden);
    return {hidden, logits};
}

SegOutput SeqSplatModel::plan_teacher_forced(const std::vector<int>& instruction_ids,
                                             const std::vector<int>& gold) const {
    if (gold.empty())
        throw std::runtime_error("plan_teacher_forced: empty gold output");
    std::vector<int> ids = instruction_ids;
    ids.push_back(Vocabulary::kBos);
    ids.insert(ids.end(), gold.begin(), gold.end());
    auto [hidden, logits] = planner_forward(ids);

    SegOutput out;
    out.output_ids = gold;
    const size_t start = instruction_ids.size();  // position of <BOS>
    out.token_logits = ag::slice(logits, 0, start, gold.size());
    for (size_t k = 0; k < gold.size(); ++k)
        if (gold[k] == Vocabulary::kSeg) {
            size_t pos = start + 1 + k;
            out.seg_positions.push_back(pos);
            out.seg_states.push_back(
                ag::reshape(ag::slice(hidden, 0, pos, 1), {cfg_.planner.d_model}));
        }
    return out;
}

SegOutput SeqSplatModel::plan_greedy(const std::vector<int>& instruction_ids,
                                     size_t max_steps, size_t max_tokens) const {
    if (max_steps < 1)
        throw std::runtime_error("plan_greedy: max_steps must be >= 1");
    ag::NoGradGuard ng;
    max_tokens = std::min(max_tokens, cfg_.planner.context);
    std::vector<int> ids = instruction_ids;
    ids.push_back(Vocabulary::kBos);
    if (ids.size() >= max_tokens)
        throw std::runtime_error("plan_greedy: instruction exhausts the token budget");

    SegOutput out;
    size_t segs = 0;
    while (ids.size() < max_tokens) {
        auto [hidden, logits] = planner_forward(ids);
        const size_t v = vocab_.size();
        const double* row = logits.data() + (ids.size() - 1) * v;
        int best = 0;
        for (size_t j = 1; j < v; ++j)
            if (row[j] > row[best])  // ties keep the lowest token id
                best = static_cast<int>(j);
        ids.push_back(best);
        out.output_ids.push_back(best);
        if (best == Vocabulary::kEos)
            break;
        if (best == Vocabulary::kSeg) {
            out.seg_positions.push_back(ids.size() - 1);
            if (++segs >= max_steps)
                break;
        }
    }
    // causality makes one final pass equivalent to capturing h_seg per step
    auto [hidden, logits] = planner_forward(ids);
    for (size_t pos : out.seg_positions)
        out.seg_states.push_back(
            ag::reshape(ag::slice(hidden, 0, pos, 1), {cfg_.planner.d_model}));
    out.token_logits =
        ag::slice(logits, 0, instruction_ids.size(), out.output_ids.size());
    out.decoded_text = vocab_.decode(out.output_ids);
    return out;
}

ag::Tensor SeqSplatModel::decode_affordance(const ag::Tensor& h_seg,
                                            const ag::Tensor& f_geo,
                                            const lift::FeatureBank& f_sem) const {
    const size_t n = f_geo.dim(0);
    if (f_sem.n != n)
        throw std::runtime_error("decode_affordance: F_sem has " +
                                 std::to_string(f_sem.n) + " rows, scene has " +
                                 std::to_string(n));
    if (f_sem.d != cfg_.d_sem)
        throw std::runtime_error("decode_affordance: semantic dim mismatch");
    std::vector<double> sem_vals(static_cast<size_t>(f_sem.n) * f_sem.d);
    for (size_t i = 0; i < sem_vals.size(); ++i)
        sem_vals[i] = static_cast<double>(f_sem.data[i]);
    ag::Tensor sem = ag::Tensor::from({n, cfg_.d_sem}, std::move(sem_vals));

    ag::Tensor q = lin("decoder.hseg", h_seg);
    ag::Tensor pf = f_geo;
    for (size_t s = 0; s < cfg_.decoder.scales; ++s) {
        std::string p = "decoder.scale" + std::to_string(s);
        if (s > 0)
            pf = ag::gelu(lin(p + ".trans", pf));
        ag::Tensor k = ag::add(pf, lin(p + ".sem", sem, /*bias=*/false));
        ag::Tensor attended = ag::single_query_attention(q, k, k);
        q = ag::add(q, attended);
        q = ag::add(q, lin(p + ".mlp2", ag::gelu(lin(p + ".mlp1", q))));
    }
    ag::Tensor projected = lin("decoder.mask_head", pf, /*bias=*/false);  // (n, d)
    ag::Tensor logits =
        ag::matmul(projected, ag::reshape(q, {cfg_.decoder.d_model, 1}));
    return ag::reshape(logits, {n});
}

SeqSplatModel::SequenceForward SeqSplatModel::forward_sequence(
    const scene::AffordanceSequence& sample, const scene::GaussianScene& scn,
    const lift::FeatureBank& f_sem, Mode mode) const {
    SequenceForward out;
    ag::Tensor f_geo = encode_scene(scn);
    std::vector<int> instr = encode_instruction(sample.instruction);
    if (mode == Mode::Teacher)
        out.plan = plan_teacher_forced(instr, gold_output_ids(sample));
    else
        out.plan = plan_greedy(instr);
    for (const auto& state : out.plan.seg_states)
        out.mask_logits.push_back(decode_affordance(state, f_geo, f_sem));
    return out;
}

std::vector<int> SeqSplatModel::encode_instruction(const std::string& text) const {
    return vocab_.encode(text);
}

std::vector<int> SeqSplatModel::gold_output_ids(
    const scene::AffordanceSequence& sample) const {
    std::vector<int> out;
    for (const auto& step : sample.steps) {
        std::vector<int> ids = vocab_.encode(step.text);
        out.insert(out.end(), ids.begin(), ids.end());
        out.push_back(Vocabulary::kSeg);
    }
    out.push_back(Vocabulary::kEos);
    return out;
}

}  // namespace seqsplat::model
