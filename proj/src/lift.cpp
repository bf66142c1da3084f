// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/lift.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "seqsplat/util.hpp"

namespace seqsplat::lift {

FeatureMap ProceduralFeatureizer::featureize(const raster::Image& image) const {
    const int w = image.width, h = image.height;
    FeatureMap map;
    map.width = w;
    map.height = h;
    map.dim = 16;
    map.data.assign(static_cast<size_t>(w) * h * 16, 0.0);
    const double two_pi = 6.283185307179586;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            map.at(x, y, 0) = image.at(x, y, 0);
            map.at(x, y, 1) = image.at(x, y, 1);
            map.at(x, y, 2) = image.at(x, y, 2);
            map.at(x, y, 3) = std::sin(two_pi * x / w);
            map.at(x, y, 4) = std::cos(two_pi * x / w);
            map.at(x, y, 5) = std::sin(two_pi * y / h);
            map.at(x, y, 6) = std::cos(two_pi * y / h);
            for (int c = 0; c < 3; ++c) {
                double m1 = 0.0, m2 = 0.0, m3 = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int xx = std::clamp(x + dx, 0, w - 1);
                        int yy = std::clamp(y + dy, 0, h - 1);
                        double v = image.at(xx, yy, c);
                        m1 += v;
                        m2 += v * v;
                        m3 += v * v * v;
                    }
                map.at(x, y, 7 + c) = m1 / 9.0;
                map.at(x, y, 10 + c) = m2 / 9.0;
                map.at(x, y, 13 + c) = m3 / 9.0;
            }
        }
    return map;
}

FeatureMap resize_bilinear(const FeatureMap& map, int width, int height) {
    if (map.width == width && map.height == height)
        return map;
    FeatureMap out;
    out.width = width;
    out.height = height;
    out.dim = map.dim;
    out.view_id = map.view_id;
    out.data.assign(static_cast<size_t>(width) * height * map.dim, 0.0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double sx = (x + 0.5) * map.width / width - 0.5;
            double sy = (y + 0.5) * map.height / height - 0.5;
            int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, map.width - 1);
            int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, map.height - 1);
            int x1 = std::min(x0 + 1, map.width - 1);
            int y1 = std::min(y0 + 1, map.height - 1);
            double fx = std::clamp(sx - x0, 0.0, 1.0);
            double fy = std::clamp(sy - y0, 0.0, 1.0);
            for (int c = 0; c < map.dim; ++c) {
                double v = (1 - fy) * ((1 - fx) * map.at(x0, y0, c) + fx * map.at(x1, y0, c)) +
                           fy * ((1 - fx) * map.at(x0, y1, c) + fx * map.at(x1, y1, c));
                out.at(x, y, c) = v;
            }
        }
    return out;
}

FeatureBank FeatureBank::zeros(uint32_t n, uint32_t d) {
    FeatureBank b;
    b.n = n;
    b.d = d;
    b.data.assign(static_cast<size_t>(n) * d, 0.0f);
    b.coverage.assign(n, 0.0f);
    return b;
}

void FeatureBank::save(const std::filesystem::path& path) const {
    std::ostringstream os(std::ios::binary);
    os.write("SSFB", 4);
    write_u32(os, n);
    write_u32(os, d);
    for (float v : data)
        write_f32(os, v);
    for (float v : coverage)
        write_f32(os, v);
    write_file_atomic(path, os.str());
}

FeatureBank FeatureBank::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open feature bank: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SSFB", 4) != 0)
        throw std::runtime_error("bad feature bank magic in " + path.string());
    FeatureBank b;
    b.n = read_u32(is);
    b.d = read_u32(is);
    b.data.resize(static_cast<size_t>(b.n) * b.d);
    for (auto& v : b.data)
        v = read_f32(is);
    b.coverage.resize(b.n);
    for (auto& v : b.coverage)
        v = read_f32(is);
    return b;
}

FeatureBank lift_features(const scene::GaussianScene& scn,
                          const std::vector<raster::Camera>& cams,
                          const std::vector<FeatureMap>& maps,
                          const std::vector<raster::WeightRender>& weights) {
    if (cams.size() != maps.size() || cams.size() != weights.size())
        throw std::runtime_error("lift_features: view count mismatch (" +
                                 std::to_string(cams.size()) + " cameras, " +
                                 std::to_string(maps.size()) + " maps, " +
                                 std::to_string(weights.size()) + " weight sets)");
    if (maps.empty())
        throw std::runtime_error("lift_features: no views");
    const uint32_t d = static_cast<uint32_t>(maps[0].dim);
    const size_t n = scn.size();

    // canonical accumulation order: ascending view_id, then pixel-major
    std::vector<size_t> view_order(maps.size());
    std::iota(view_order.begin(), view_order.end(), 0);
    std::sort(view_order.begin(), view_order.end(), [&](size_t a, size_t b) {
        return maps[a].view_id < maps[b].view_id;
    });

    std::vector<double> num(n * d, 0.0), num_c(n * d, 0.0);
    std::vector<double> den(n, 0.0), den_c(n, 0.0);
    auto kahan_add = [](double& sum, double& comp, double value) {
        double y = value - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    };

    for (size_t vi : view_order) {
        const FeatureMap* map = &maps[vi];
        FeatureMap upsampled;
        if (map->width != weights[vi].width || map->height != weights[vi].height) {
            upsampled = resize_bilinear(*map, weights[vi].width, weights[vi].height);
            map = &upsampled;
        }
        if (map->dim != static_cast<int>(d))
            throw std::runtime_error("lift_features: feature dim mismatch across views");
        for (const auto& rec : weights[vi].records) {
            if (rec.gaussian >= n)
                throw std::runtime_error("lift_features: record references gaussian " +
                                         std::to_string(rec.gaussian) + " >= N");
            const double* f =
                map->data.data() + (static_cast<size_t>(rec.y) * map->width + rec.x) * d;
            double* nrow = num.data() + static_cast<size_t>(rec.gaussian) * d;
            double* crow = num_c.data() + static_cast<size_t>(rec.gaussian) * d;
            for (uint32_t c = 0; c < d; ++c)
                kahan_add(nrow[c], crow[c], rec.weight * f[c]);
            kahan_add(den[rec.gaussian], den_c[rec.gaussian], rec.weight);
        }
    }

    FeatureBank bank = FeatureBank::zeros(static_cast<uint32_t>(n), d);
    for (size_t i = 0; i < n; ++i) {
        bank.coverage[i] = static_cast<float>(den[i]);
        if (den[i] > 0.0) {
            double inv = 1.0 / den[i];
            for (uint32_t c = 0; c < d; ++c)
                bank.data[i * d + c] = static_cast<float>(num[i * d + c] * inv);
        }
    }
    return bank;
}

uint64_t scene_content_hash(const scene::GaussianScene& scn) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& g : scn.primitives) {
        double fields[14] = {g.position.x(),   g.position.y(),   g.position.z(),
                             g.color.x(),      g.color.y(),      g.color.z(),
                             g.opacity,        g.scale.x(),      g.scale.y(),
                             g.scale.z(),      g.rotation.w(),   g.rotation.x(),
                             g.rotation.y(),   g.rotation.z()};
        h = fnv1a(fields, sizeof(fields), h);
    }
    return h;
}

FeatureBank lift_pipeline(const scene::GaussianScene& scn, const Featureizer& feat,
                          const LiftOptions& opts) {
    if (opts.views < 1)
        throw std::runtime_error("lift_pipeline: views must be >= 1");

    std::filesystem::path cache_file;
    if (!opts.cache_dir.empty()) {
        uint64_t key = scene_content_hash(scn);
        key = hash_combine(key, opts.views);
        key = hash_combine(key, static_cast<uint64_t>(opts.resolution));
        key = hash_combine(key, fnv1a(feat.id()));
        double bg[3] = {opts.background.x(), opts.background.y(), opts.background.z()};
        key = fnv1a(bg, sizeof(bg), key);
        cache_file = opts.cache_dir / ("bank_" + hash_hex(key) + ".ssfb");
        if (std::filesystem::exists(cache_file))
            return FeatureBank::load(cache_file);
    }

    auto cams = raster::default_view_ring(scn, opts.views, opts.resolution, opts.resolution);
    std::vector<FeatureMap> maps(cams.size());
    std::vector<raster::WeightRender> weights(cams.size());
    for (size_t v = 0; v < cams.size(); ++v) {
        raster::Image img = raster::render_rgb(scn, cams[v], opts.background);
        maps[v] = feat.featureize(img);
        maps[v].view_id = static_cast<int>(v);
        weights[v] = raster::render_weights(scn, cams[v]);
    }
    FeatureBank bank = lift_features(scn, cams, maps, weights);

    if (!cache_file.empty()) {
        std::filesystem::create_directories(opts.cache_dir);
        bank.save(cache_file);
    }
    return bank;
}

}  // namespace seqsplat::lift
