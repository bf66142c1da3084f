// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Software Gaussian splatting: EWA projection, tile-based front-to-back
// alpha compositing, per-pixel per-Gaussian rendering weights, RGB renders.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "seqsplat/scene.hpp"

namespace seqsplat::raster {

struct Camera {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world-to-camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    double near = 0.01, far = 100.0;

    Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const {
        return rotation * p_world + translation;
    }

    // Right-handed look-at; camera axes: +x right, +y down, +z forward.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, double fx, double fy, int width,
                          int height, double near, double far);
};

struct ScreenGaussian {
    Eigen::Vector2d mean2d;   // pixels
    Eigen::Matrix2d cov2d;    // pixels^2, after low-pass padding
    double depth = 0.0;       // view-space z
    uint32_t source_index = 0;
};

struct WeightRecord {
    uint16_t x = 0, y = 0;
    uint32_t gaussian = 0;
    double weight = 0.0;
};

struct RenderOptions {
    double alpha_clamp = 0.99;
    double lowpass = 0.3;            // px^2 added to cov2d diagonal
    double stop_transmittance = 1e-4;
    double weight_cutoff = 1.0 / 255.0;  // records with w <= cutoff are dropped
    double cull_sigma = 3.0;
};

// Records grouped per pixel (pixel-major order, front-to-back within a pixel)
// plus the final per-pixel transmittance.
struct WeightRender {
    int width = 0, height = 0;
    std::vector<WeightRecord> records;
    std::vector<uint32_t> pixel_offset;  // size H*W+1, records of pixel p in [off[p], off[p+1])
    std::vector<double> transmittance;   // size H*W
};

struct Image {
    int width = 0, height = 0;
    std::vector<double> rgb;  // H*W*3 row-major, values in [0,1]

    double& at(int x, int y, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const {
        return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

// EWA projection of one primitive; nullopt when culled (depth outside
// (near, far) or mean further than cull_sigma out of the image).
std::optional<ScreenGaussian> project_gaussian(const scene::GaussianPrimitive& g,
                                               const Camera& cam,
                                               const RenderOptions& opts = {});

WeightRender render_weights(const scene::GaussianScene& scn, const Camera& cam,
                            const RenderOptions& opts = {});

Image render_rgb(const scene::GaussianScene& scn, const Camera& cam,
                 const Eigen::Vector3d& background = Eigen::Vector3d::Zero(),
                 const RenderOptions& opts = {});

// m cameras on a circle at 1.5x bounding radius, 30 deg elevation, equal
// azimuth spacing, all looking at the bounding-sphere center.
std::vector<Camera> default_view_ring(const scene::GaussianScene& scn, size_t m,
                                      int width, int height);

// Bounding sphere over primitive centers padded by 3x the largest scale.
std::pair<Eigen::Vector3d, double> bounding_sphere(const scene::GaussianScene& scn);

// Debug dump: magic SSWT, then (u16 x, u16 y, u32 gaussian, f32 weight) LE.
void save_weights(const WeightRender& wr, const std::filesystem::path& path);
std::vector<WeightRecord> load_weights(const std::filesystem::path& path);

// Binary PPM (P6), 8-bit.
void save_ppm(const Image& img, const std::filesystem::path& path);

}  // namespace seqsplat::raster
