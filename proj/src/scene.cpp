// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "seqsplat/util.hpp"

namespace seqsplat::scene {

using json = nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error("scene parse error in " + path.string() + ": " + what);
}

constexpr double kMinScale = 1e-8;

const char* kPropertyNames[14] = {"x",       "y",       "z",       "f_dc_0", "f_dc_1",
                                  "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                                  "rot_0",   "rot_1",   "rot_2",   "rot_3"};

size_t ply_type_size(const std::string& t) {
    if (t == "float" || t == "float32" || t == "int" || t == "int32" || t == "uint" ||
        t == "uint32")
        return 4;
    if (t == "double" || t == "float64")
        return 8;
    if (t == "char" || t == "int8" || t == "uchar" || t == "uint8")
        return 1;
    if (t == "short" || t == "int16" || t == "ushort" || t == "uint16")
        return 2;
    return 0;  // unknown / list
}

struct PlyHeader {
    bool binary = false;
    size_t vertex_count = 0;
    // (type, name) in declaration order for element vertex
    std::vector<std::pair<std::string, std::string>> properties;
    size_t header_bytes = 0;
    size_t header_lines = 0;
    // index into properties[] for each required field
    int field_index[14];
};

PlyHeader parse_ply_header(std::istream& is, const std::filesystem::path& path) {
    PlyHeader h;
    std::string line;
    size_t line_no = 0;
    size_t bytes = 0;
    bool in_vertex = false;
    bool seen_vertex = false;
    bool done = false;

    auto next_line = [&]() -> bool {
        if (!std::getline(is, line))
            return false;
        ++line_no;
        bytes += line.size() + 1;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        return true;
    };

    if (!next_line() || line != "ply")
        parse_fail(path, "line 1: missing 'ply' magic");
    while (next_line()) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment")
            continue;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii")
                h.binary = false;
            else if (fmt == "binary_little_endian")
                h.binary = true;
            else
                parse_fail(path, "line " + std::to_string(line_no) +
                                     ": unsupported format '" + fmt + "'");
        } else if (word == "element") {
            std::string name;
            size_t count = 0;
            ls >> name >> count;
            if (name == "vertex") {
                in_vertex = true;
                seen_vertex = true;
                h.vertex_count = count;
            } else {
                if (seen_vertex)
                    in_vertex = false;  // trailing elements are ignored
                else
                    parse_fail(path, "line " + std::to_string(line_no) +
                                         ": element '" + name + "' precedes vertex");
                if (count > 0 && !h.binary) {
                    // ascii trailing elements are simply not read
                }
            }
        } else if (word == "property") {
            if (!in_vertex)
                continue;
            std::string type, name;
            ls >> type;
            if (type == "list")
                parse_fail(path, "line " + std::to_string(line_no) +
                                     ": list properties unsupported on vertex");
            ls >> name;
            h.properties.emplace_back(type, name);
        } else if (word == "end_header") {
            done = true;
            break;
        } else if (!word.empty()) {
            parse_fail(path, "line " + std::to_string(line_no) + ": unknown keyword '" +
                                 word + "'");
        }
    }
    if (!done)
        parse_fail(path, "unterminated header");
    if (!seen_vertex)
        parse_fail(path, "no vertex element");

    for (int f = 0; f < 14; ++f) {
        h.field_index[f] = -1;
        for (size_t p = 0; p < h.properties.size(); ++p)
            if (h.properties[p].second == kPropertyNames[f]) {
                if (h.properties[p].first != "float" && h.properties[p].first != "float32")
                    parse_fail(path, std::string("property '") + kPropertyNames[f] +
                                         "' must be float32");
                h.field_index[f] = static_cast<int>(p);
                break;
            }
        if (h.field_index[f] < 0)
            parse_fail(path, std::string("missing required property '") +
                                 kPropertyNames[f] + "'");
    }
    h.header_bytes = bytes;
    h.header_lines = line_no;
    return h;
}

GaussianPrimitive primitive_from_fields(const double fields[14],
                                        const std::filesystem::path& path,
                                        const std::string& where) {
    for (int i = 0; i < 14; ++i)
        if (!std::isfinite(fields[i]))
            parse_fail(path, where + ": non-finite value in property '" +
                                 kPropertyNames[i] + "'");
    GaussianPrimitive g;
    g.position = {fields[0], fields[1], fields[2]};
    g.color = {fields[3], fields[4], fields[5]};
    g.opacity = std::clamp(fields[6], 0.0, 1.0);
    g.scale = {std::max(fields[7], kMinScale), std::max(fields[8], kMinScale),
               std::max(fields[9], kMinScale)};
    Eigen::Quaterniond q(fields[10], fields[11], fields[12], fields[13]);
    double norm = q.norm();
    if (norm < 1e-12)
        parse_fail(path, where + ": zero-norm rotation quaternion");
    q.coeffs() /= norm;
    g.rotation = q;
    return g;
}

}  // namespace

void GaussianScene::validate() const {
    if (primitives.empty())
        throw std::runtime_error("scene: N must be >= 1");
    for (size_t i = 0; i < primitives.size(); ++i) {
        const auto& g = primitives[i];
        if (std::abs(g.rotation.norm() - 1.0) > 1e-6)
            throw std::runtime_error("scene: primitive " + std::to_string(i) +
                                     " rotation not unit-norm");
        if (g.scale.minCoeff() <= 0.0)
            throw std::runtime_error("scene: primitive " + std::to_string(i) +
                                     " scale not strictly positive");
        if (g.opacity < 0.0 || g.opacity > 1.0)
            throw std::runtime_error("scene: primitive " + std::to_string(i) +
                                     " opacity outside [0,1]");
    }
    if (object_labels && object_labels->size() != primitives.size())
        throw std::runtime_error("scene: object_labels length mismatch");
}

bool AffordanceMask::is_binary() const {
    return std::all_of(scores.begin(), scores.end(),
                       [](double s) { return s == 0.0 || s == 1.0; });
}

size_t AffordanceMask::cardinality(double threshold) const {
    size_t c = 0;
    for (double s : scores)
        if (s >= threshold)
            ++c;
    return c;
}

AffordanceMask AffordanceMask::zeros(size_t n, std::string type) {
    AffordanceMask m;
    m.scores.assign(n, 0.0);
    m.affordance_type = std::move(type);
    return m;
}

AffordanceMask AffordanceMask::from_range(size_t n, size_t begin, size_t end,
                                          std::string type) {
    AffordanceMask m = zeros(n, std::move(type));
    for (size_t i = begin; i < end && i < n; ++i)
        m.scores[i] = 1.0;
    return m;
}

RigidScaleTransform RigidScaleTransform::compose(const RigidScaleTransform& second,
                                                 const RigidScaleTransform& first) {
    RigidScaleTransform out;
    out.uniform_scale = second.uniform_scale * first.uniform_scale;
    out.rotation = (second.rotation * first.rotation).normalized();
    out.translation =
        second.uniform_scale * (second.rotation * first.translation) + second.translation;
    return out;
}

// --- PLY io ---

GaussianScene load_scene(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open scene file: " + path.string());
    PlyHeader h = parse_ply_header(is, path);
    if (h.vertex_count == 0)
        parse_fail(path, "vertex count must be >= 1");

    GaussianScene scene;
    scene.primitives.reserve(h.vertex_count);

    if (!h.binary) {
        size_t line_no = h.header_lines;
        std::string line;
        for (size_t v = 0; v < h.vertex_count; ++v) {
            if (!std::getline(is, line))
                parse_fail(path, "line " + std::to_string(line_no + v + 1) +
                                     ": unexpected end of file");
            // strtod accepts nan/inf tokens, which the finiteness check rejects
            std::istringstream ls(line);
            std::vector<double> vals(h.properties.size());
            std::string tok;
            for (size_t p = 0; p < h.properties.size(); ++p) {
                if (!(ls >> tok))
                    parse_fail(path, "line " + std::to_string(line_no + v + 1) +
                                         ": expected " +
                                         std::to_string(h.properties.size()) + " values");
                char* end = nullptr;
                vals[p] = std::strtod(tok.c_str(), &end);
                if (end == tok.c_str() || *end != '\0')
                    parse_fail(path, "line " + std::to_string(line_no + v + 1) +
                                         ": malformed number '" + tok + "'");
            }
            double fields[14];
            for (int f = 0; f < 14; ++f)
                fields[f] = vals[static_cast<size_t>(h.field_index[f])];
            scene.primitives.push_back(primitive_from_fields(
                fields, path, "line " + std::to_string(line_no + v + 1)));
        }
    } else {
        size_t record_size = 0;
        std::vector<size_t> prop_offset(h.properties.size());
        for (size_t p = 0; p < h.properties.size(); ++p) {
            size_t sz = ply_type_size(h.properties[p].first);
            if (sz == 0)
                parse_fail(path, "property '" + h.properties[p].second +
                                     "' has unsupported type '" + h.properties[p].first +
                                     "'");
            prop_offset[p] = record_size;
            record_size += sz;
        }
        std::vector<char> rec(record_size);
        for (size_t v = 0; v < h.vertex_count; ++v) {
            is.read(rec.data(), static_cast<std::streamsize>(record_size));
            if (!is)
                parse_fail(path, "byte offset " +
                                     std::to_string(h.header_bytes + v * record_size) +
                                     ": unexpected end of file");
            double fields[14];
            for (int f = 0; f < 14; ++f) {
                float x;
                std::memcpy(&x, rec.data() + prop_offset[static_cast<size_t>(h.field_index[f])],
                            4);
                fields[f] = static_cast<double>(x);
            }
            scene.primitives.push_back(primitive_from_fields(
                fields, path,
                "byte offset " + std::to_string(h.header_bytes + v * record_size)));
        }
    }
    return scene;
}

size_t peek_scene_size(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open scene file: " + path.string());
    PlyHeader h = parse_ply_header(is, path);
    return h.vertex_count;
}

void save_scene(const GaussianScene& scene, const std::filesystem::path& path) {
    scene.validate();
    std::ostringstream os(std::ios::binary);
    os << "ply\n"
       << "format binary_little_endian 1.0\n"
       << "element vertex " << scene.size() << "\n";
    for (const char* name : kPropertyNames)
        os << "property float " << name << "\n";
    os << "end_header\n";
    for (const auto& g : scene.primitives) {
        float fields[14] = {
            static_cast<float>(g.position.x()), static_cast<float>(g.position.y()),
            static_cast<float>(g.position.z()), static_cast<float>(g.color.x()),
            static_cast<float>(g.color.y()),    static_cast<float>(g.color.z()),
            static_cast<float>(g.opacity),      static_cast<float>(g.scale.x()),
            static_cast<float>(g.scale.y()),    static_cast<float>(g.scale.z()),
            static_cast<float>(g.rotation.w()), static_cast<float>(g.rotation.x()),
            static_cast<float>(g.rotation.y()), static_cast<float>(g.rotation.z())};
        for (float f : fields)
            write_f32(os, f);
    }
    write_file_atomic(path, os.str());
}

// --- transforms ---

GaussianScene apply_transform(const GaussianScene& scene, const RigidScaleTransform& t) {
    if (t.uniform_scale <= 0.0)
        throw std::runtime_error("apply_transform: uniform_scale must be positive");
    Eigen::Quaterniond q = t.rotation.normalized();
    GaussianScene out;
    out.object_labels = scene.object_labels;
    out.primitives.reserve(scene.size());
    for (const auto& g : scene.primitives) {
        GaussianPrimitive p = g;
        p.position = t.uniform_scale * (q * g.position) + t.translation;
        Eigen::Quaterniond r = q * g.rotation;
        // renormalize only on measurable drift so identity stays bit-exact
        double n2 = r.squaredNorm();
        if (std::abs(n2 - 1.0) > 1e-12)
            r.coeffs() /= std::sqrt(n2);
        p.rotation = r;
        p.scale = t.uniform_scale * g.scale;
        out.primitives.push_back(p);
    }
    return out;
}

ComposedScene compose_scenes(const std::vector<ScenePart>& parts) {
    if (parts.empty())
        throw std::runtime_error("compose_scenes: no parts");
    size_t total = 0;
    for (const auto& part : parts) {
        for (const auto& m : part.masks)
            if (m.size() != part.scene.size())
                throw std::runtime_error(
                    "compose_scenes: mask length " + std::to_string(m.size()) +
                    " does not match part N " + std::to_string(part.scene.size()));
        total += part.scene.size();
    }
    ComposedScene out;
    out.scene.primitives.reserve(total);
    std::vector<int> labels;
    labels.reserve(total);
    size_t offset = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        out.offsets.push_back(offset);
        GaussianScene moved = apply_transform(parts[pi].scene, parts[pi].transform);
        for (const auto& g : moved.primitives)
            out.scene.primitives.push_back(g);
        for (size_t i = 0; i < moved.size(); ++i)
            labels.push_back(static_cast<int>(pi));
        for (const auto& m : parts[pi].masks) {
            AffordanceMask re = AffordanceMask::zeros(total, m.affordance_type);
            for (size_t i = 0; i < m.size(); ++i)
                re.scores[offset + i] = m.scores[i];
            out.masks.push_back(std::move(re));
        }
        offset += moved.size();
    }
    out.scene.object_labels = std::move(labels);
    return out;
}

// --- RLE / soft masks ---

std::string rle_encode(const AffordanceMask& mask, double threshold) {
    std::ostringstream os;
    bool first = true;
    size_t i = 0;
    const size_t n = mask.size();
    while (i < n) {
        if (mask.scores[i] >= threshold) {
            size_t start = i;
            while (i < n && mask.scores[i] >= threshold)
                ++i;
            if (!first)
                os << ",";
            os << start << ":" << (i - start);
            first = false;
        } else {
            ++i;
        }
    }
    return os.str();
}

AffordanceMask rle_decode(const std::string& rle, size_t n, std::string type) {
    AffordanceMask m = AffordanceMask::zeros(n, std::move(type));
    if (rle.empty())
        return m;
    std::istringstream is(rle);
    std::string run;
    long long prev_end = -1;
    while (std::getline(is, run, ',')) {
        size_t colon = run.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error("rle: malformed run '" + run + "'");
        long long start = std::stoll(run.substr(0, colon));
        long long len = std::stoll(run.substr(colon + 1));
        if (start < 0 || len <= 0)
            throw std::runtime_error("rle: invalid run '" + run + "'");
        if (start < prev_end)
            throw std::runtime_error("rle: runs not sorted or overlapping at '" + run + "'");
        if (static_cast<size_t>(start + len) > n)
            throw std::runtime_error("rle: index " + std::to_string(start + len - 1) +
                                     " out of bounds for N=" + std::to_string(n));
        for (long long i = start; i < start + len; ++i)
            m.scores[static_cast<size_t>(i)] = 1.0;
        prev_end = start + len;
    }
    return m;
}

std::string soft_b16_encode(const AffordanceMask& mask) {
    std::vector<uint8_t> bytes;
    bytes.reserve(mask.size() * 2);
    for (double s : mask.scores) {
        double c = std::clamp(s, 0.0, 1.0);
        auto q = static_cast<uint16_t>(std::lround(c * 65535.0));
        bytes.push_back(static_cast<uint8_t>(q & 0xff));
        bytes.push_back(static_cast<uint8_t>(q >> 8));
    }
    return base64_encode(bytes);
}

AffordanceMask soft_b16_decode(const std::string& b64, size_t n, std::string type) {
    std::vector<uint8_t> bytes = base64_decode(b64);
    if (bytes.size() != n * 2)
        throw std::runtime_error("soft_b16: payload holds " +
                                 std::to_string(bytes.size() / 2) + " entries, expected " +
                                 std::to_string(n));
    AffordanceMask m = AffordanceMask::zeros(n, std::move(type));
    for (size_t i = 0; i < n; ++i) {
        uint16_t q = static_cast<uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
        m.scores[i] = static_cast<double>(q) / 65535.0;
    }
    return m;
}

// --- annotations ---

namespace {

AnnotationDoc parse_annotations(const json& doc, size_t n,
                                const std::filesystem::path& path) {
    AnnotationDoc out;
    out.scene_path = doc.at("scene").get<std::string>();

    std::map<std::string, AffordanceMask> masks;
    for (const auto& [id, spec] : doc.at("masks").items()) {
        std::string type = spec.value("type", "");
        if (spec.contains("rle"))
            masks.emplace(id, rle_decode(spec.at("rle").get<std::string>(), n, type));
        else if (spec.contains("soft_b16"))
            masks.emplace(id,
                          soft_b16_decode(spec.at("soft_b16").get<std::string>(), n, type));
        else
            throw std::runtime_error("annotations " + path.string() + ": mask '" + id +
                                     "' has neither rle nor soft_b16");
    }
    for (const auto& sample : doc.at("samples")) {
        AffordanceSequence seq;
        seq.instruction = sample.at("instruction").get<std::string>();
        for (const auto& step : sample.at("steps")) {
            AffordanceStep s;
            s.text = step.at("text").get<std::string>();
            std::string mask_id = step.at("mask").get<std::string>();
            auto it = masks.find(mask_id);
            if (it == masks.end())
                throw std::runtime_error("annotations " + path.string() +
                                         ": dangling mask reference '" + mask_id + "'");
            s.mask = it->second;
            seq.steps.push_back(std::move(s));
        }
        if (seq.steps.empty())
            throw std::runtime_error("annotations " + path.string() +
                                     ": sample with empty steps list");
        out.samples.push_back(std::move(seq));
    }
    return out;
}

}  // namespace

AnnotationDoc load_annotations(const std::filesystem::path& path) {
    json doc = json::parse(read_text_file(path));
    std::filesystem::path scene_file =
        path.parent_path() / doc.at("scene").get<std::string>();
    size_t n = peek_scene_size(scene_file);
    return parse_annotations(doc, n, path);
}

AnnotationDoc load_annotations(const std::filesystem::path& path, size_t n) {
    json doc = json::parse(read_text_file(path));
    return parse_annotations(doc, n, path);
}

void save_annotations(const AnnotationDoc& doc, const std::filesystem::path& path) {
    json out;
    out["scene"] = doc.scene_path;

    // deduplicate identical masks by content hash
    json masks = json::object();
    std::map<uint64_t, std::string> seen;
    auto mask_id = [&](const AffordanceMask& m) -> std::string {
        uint64_t h = fnv1a(m.affordance_type);
        h = fnv1a(m.scores.data(), m.scores.size() * sizeof(double), h);
        auto it = seen.find(h);
        if (it != seen.end())
            return it->second;
        std::string id = "m" + std::to_string(seen.size());
        seen.emplace(h, id);
        json spec;
        spec["type"] = m.affordance_type;
        if (m.is_binary())
            spec["rle"] = rle_encode(m);
        else
            spec["soft_b16"] = soft_b16_encode(m);
        masks[id] = spec;
        return id;
    };

    json samples = json::array();
    for (const auto& seq : doc.samples) {
        json steps = json::array();
        for (const auto& step : seq.steps)
            steps.push_back({{"text", step.text}, {"mask", mask_id(step.mask)}});
        samples.push_back({{"instruction", seq.instruction}, {"steps", steps}});
    }
    out["masks"] = masks;
    out["samples"] = samples;
    write_file_atomic(path, out.dump(2) + "\n");
}

}  // namespace seqsplat::scene
