// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Learning-free lifting of per-view 2D feature maps into a per-Gaussian
// feature bank: f_i = sum_{(v,p)} w_i(v,p) F_p^(v) / sum w_i(v,p).

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "seqsplat/raster.hpp"
#include "seqsplat/scene.hpp"

namespace seqsplat::lift {

struct FeatureMap {
    int width = 0, height = 0, dim = 0;
    int view_id = 0;
    std::vector<double> data;  // H*W*dim row-major

    double at(int x, int y, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * dim + c];
    }
    double& at(int x, int y, int c) {
        return data[(static_cast<size_t>(y) * width + x) * dim + c];
    }
};

class Featureizer {
public:
    virtual ~Featureizer() = default;
    virtual int dim() const = 0;
    virtual std::string id() const = 0;
    virtual FeatureMap featureize(const raster::Image& image) const = 0;
};

// Deterministic stand-in for a frozen VFM. d_sem = 16:
// 0-2 RGB, 3-6 sin/cos positional encodings of (x,y), 7-15 raw color
// moments (mean, square, cube) mean-pooled over a clamped 3x3 window.
class ProceduralFeatureizer : public Featureizer {
public:
    int dim() const override { return 16; }
    std::string id() const override { return "procedural-v1"; }
    FeatureMap featureize(const raster::Image& image) const override;
};

// Bilinear upsampling for featureizers that emit a coarser grid than the
// camera resolution.
FeatureMap resize_bilinear(const FeatureMap& map, int width, int height);

struct FeatureBank {
    uint32_t n = 0, d = 0;
    std::vector<float> data;      // n*d row-major
    std::vector<float> coverage;  // accumulated weight per gaussian

    float at(size_t i, size_t c) const { return data[i * d + c]; }
    bool covered(size_t i) const { return coverage[i] > 0.0f; }

    static FeatureBank zeros(uint32_t n, uint32_t d);
    // File: magic SSFB, u32 N, u32 d, N*d float32 row-major, N float32
    // coverage, little-endian.
    void save(const std::filesystem::path& path) const;
    static FeatureBank load(const std::filesystem::path& path);
};

// Accumulates records from all views in canonical (view_id, pixel) order;
// 64-bit Kahan accumulation, rounded to f32 at the end. Gaussians with no
// records get the zero vector and coverage 0.
FeatureBank lift_features(const scene::GaussianScene& scn,
                          const std::vector<raster::Camera>& cams,
                          const std::vector<FeatureMap>& maps,
                          const std::vector<raster::WeightRender>& weights);

struct LiftOptions {
    size_t views = 8;
    int resolution = 256;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    std::filesystem::path cache_dir;  // empty disables caching
};

// default_view_ring -> render_rgb -> featureize -> render_weights ->
// lift_features, cached on disk keyed by (scene hash, views, resolution,
// featureizer id, background).
FeatureBank lift_pipeline(const scene::GaussianScene& scn, const Featureizer& feat,
                          const LiftOptions& opts = {});

uint64_t scene_content_hash(const scene::GaussianScene& scn);

}  // namespace seqsplat::lift
