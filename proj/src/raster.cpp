// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/raster.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "seqsplat/util.hpp"

namespace seqsplat::raster {

namespace {

constexpr int kTile = 16;

double max_eigenvalue_2x2(const Eigen::Matrix2d& c) {
    double tr = c(0, 0) + c(1, 1);
    double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
    double disc = std::sqrt(std::max(0.25 * tr * tr - det, 0.0));
    return 0.5 * tr + disc;
}

struct Projected {
    Eigen::Vector2d mean;
    Eigen::Matrix2d inv_cov;
    double radius;  // cull_sigma * sqrt(max eigenvalue)
    double opacity;
    uint32_t index;
    double depth;
};

}  // namespace

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, double fx, double fy, int width,
                       int height, double near, double far) {
    Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d right = forward.cross(up).normalized();
    Eigen::Vector3d down = forward.cross(right);
    Camera cam;
    cam.rotation.row(0) = right;
    cam.rotation.row(1) = down;
    cam.rotation.row(2) = forward;
    cam.translation = -(cam.rotation * eye);
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.width = width;
    cam.height = height;
    cam.near = near;
    cam.far = far;
    return cam;
}

std::optional<ScreenGaussian> project_gaussian(const scene::GaussianPrimitive& g,
                                               const Camera& cam,
                                               const RenderOptions& opts) {
    Eigen::Vector3d p = cam.to_camera(g.position);
    double z = p.z();
    if (z <= cam.near || z >= cam.far)
        return std::nullopt;

    ScreenGaussian out;
    out.mean2d = {cam.fx * p.x() / z + cam.cx, cam.fy * p.y() / z + cam.cy};
    out.depth = z;

    // cov2d = J W Sigma W^T J^T with Sigma = R diag(scale^2) R^T
    Eigen::Matrix3d r = g.rotation.toRotationMatrix();
    Eigen::Matrix3d sigma =
        r * g.scale.cwiseProduct(g.scale).asDiagonal() * r.transpose();
    Eigen::Matrix<double, 2, 3> jac;
    double inv_z = 1.0 / z;
    jac << cam.fx * inv_z, 0.0, -cam.fx * p.x() * inv_z * inv_z,
        0.0, cam.fy * inv_z, -cam.fy * p.y() * inv_z * inv_z;
    Eigen::Matrix<double, 2, 3> m = jac * cam.rotation;
    out.cov2d = m * sigma * m.transpose();
    out.cov2d(0, 0) += opts.lowpass;
    out.cov2d(1, 1) += opts.lowpass;

    double radius = opts.cull_sigma * std::sqrt(max_eigenvalue_2x2(out.cov2d));
    if (out.mean2d.x() < -radius || out.mean2d.x() > cam.width - 1 + radius ||
        out.mean2d.y() < -radius || out.mean2d.y() > cam.height - 1 + radius)
        return std::nullopt;
    return out;
}

WeightRender render_weights(const scene::GaussianScene& scn, const Camera& cam,
                            const RenderOptions& opts) {
    if (cam.width <= 0 || cam.height <= 0 || cam.width > 65535 || cam.height > 65535)
        throw std::runtime_error("render: invalid resolution");
    const int w = cam.width, h = cam.height;
    const size_t npix = static_cast<size_t>(w) * h;

    std::vector<Projected> proj;
    proj.reserve(scn.size());
    for (size_t i = 0; i < scn.size(); ++i) {
        auto sg = project_gaussian(scn.primitives[i], cam, opts);
        if (!sg)
            continue;
        double det = sg->cov2d.determinant();
        assert(det > 0.0 && "low-pass padding keeps cov2d non-singular");
        Projected p;
        p.mean = sg->mean2d;
        p.inv_cov << sg->cov2d(1, 1) / det, -sg->cov2d(0, 1) / det,
            -sg->cov2d(1, 0) / det, sg->cov2d(0, 0) / det;
        p.radius = opts.cull_sigma * std::sqrt(max_eigenvalue_2x2(sg->cov2d));
        p.opacity = scn.primitives[i].opacity;
        p.index = static_cast<uint32_t>(i);
        p.depth = sg->depth;
        proj.push_back(p);
    }
    std::sort(proj.begin(), proj.end(), [](const Projected& a, const Projected& b) {
        if (a.depth != b.depth)
            return a.depth < b.depth;
        return a.index < b.index;
    });

    // tile assignment in depth order keeps per-tile lists depth-sorted
    const int tiles_x = (w + kTile - 1) / kTile;
    const int tiles_y = (h + kTile - 1) / kTile;
    std::vector<std::vector<uint32_t>> tile_lists(static_cast<size_t>(tiles_x) * tiles_y);
    for (uint32_t pi = 0; pi < proj.size(); ++pi) {
        const auto& p = proj[pi];
        int x0 = std::max(0, static_cast<int>(std::floor(p.mean.x() - p.radius)));
        int x1 = std::min(w - 1, static_cast<int>(std::ceil(p.mean.x() + p.radius)));
        int y0 = std::max(0, static_cast<int>(std::floor(p.mean.y() - p.radius)));
        int y1 = std::min(h - 1, static_cast<int>(std::ceil(p.mean.y() + p.radius)));
        if (x0 > x1 || y0 > y1)
            continue;
        for (int ty = y0 / kTile; ty <= y1 / kTile; ++ty)
            for (int tx = x0 / kTile; tx <= x1 / kTile; ++tx)
                tile_lists[static_cast<size_t>(ty) * tiles_x + tx].push_back(pi);
    }

    std::vector<std::vector<WeightRecord>> per_pixel(npix);
    std::vector<double> transmittance(npix, 1.0);

    parallel_for(tile_lists.size(), [&](size_t tile) {
        const auto& list = tile_lists[tile];
        if (list.empty())
            return;
        int tx = static_cast<int>(tile % tiles_x);
        int ty = static_cast<int>(tile / tiles_x);
        int x_end = std::min(w, (tx + 1) * kTile);
        int y_end = std::min(h, (ty + 1) * kTile);
        for (int y = ty * kTile; y < y_end; ++y)
            for (int x = tx * kTile; x < x_end; ++x) {
                double t = 1.0;
                auto& bucket = per_pixel[static_cast<size_t>(y) * w + x];
                for (uint32_t pi : list) {
                    const auto& p = proj[pi];
                    double dx = x - p.mean.x();
                    double dy = y - p.mean.y();
                    double e = -0.5 * (p.inv_cov(0, 0) * dx * dx +
                                       2.0 * p.inv_cov(0, 1) * dx * dy +
                                       p.inv_cov(1, 1) * dy * dy);
                    if (e > 0.0)
                        continue;  // numeric guard
                    double alpha = std::min(p.opacity * std::exp(e), opts.alpha_clamp);
                    if (alpha < 1e-8)
                        continue;
                    double weight = alpha * t;
                    if (weight > opts.weight_cutoff)
                        bucket.push_back({static_cast<uint16_t>(x),
                                          static_cast<uint16_t>(y), p.index, weight});
                    t *= 1.0 - alpha;
                    if (t < opts.stop_transmittance)
                        break;
                }
                transmittance[static_cast<size_t>(y) * w + x] = t;
            }
    });

    WeightRender out;
    out.width = w;
    out.height = h;
    out.transmittance = std::move(transmittance);
    out.pixel_offset.resize(npix + 1, 0);
    size_t total = 0;
    for (size_t p = 0; p < npix; ++p) {
        out.pixel_offset[p] = static_cast<uint32_t>(total);
        total += per_pixel[p].size();
    }
    out.pixel_offset[npix] = static_cast<uint32_t>(total);
    out.records.reserve(total);
    for (size_t p = 0; p < npix; ++p)
        out.records.insert(out.records.end(), per_pixel[p].begin(), per_pixel[p].end());
    return out;
}

Image render_rgb(const scene::GaussianScene& scn, const Camera& cam,
                 const Eigen::Vector3d& background, const RenderOptions& opts) {
    WeightRender wr = render_weights(scn, cam, opts);
    std::vector<Eigen::Vector3d> colors(scn.size());
    for (size_t i = 0; i < scn.size(); ++i)
        colors[i] = scn.primitives[i].rgb();

    Image img;
    img.width = cam.width;
    img.height = cam.height;
    img.rgb.assign(static_cast<size_t>(cam.width) * cam.height * 3, 0.0);
    const size_t npix = static_cast<size_t>(cam.width) * cam.height;
    for (size_t p = 0; p < npix; ++p) {
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (uint32_t r = wr.pixel_offset[p]; r < wr.pixel_offset[p + 1]; ++r)
            c += wr.records[r].weight * colors[wr.records[r].gaussian];
        c += wr.transmittance[p] * background;
        img.rgb[p * 3 + 0] = std::clamp(c.x(), 0.0, 1.0);
        img.rgb[p * 3 + 1] = std::clamp(c.y(), 0.0, 1.0);
        img.rgb[p * 3 + 2] = std::clamp(c.z(), 0.0, 1.0);
    }
    return img;
}

std::pair<Eigen::Vector3d, double> bounding_sphere(const scene::GaussianScene& scn) {
    if (scn.size() == 0)
        throw std::runtime_error("bounding_sphere: empty scene");
    Eigen::Vector3d lo = scn.primitives[0].position, hi = lo;
    for (const auto& g : scn.primitives) {
        lo = lo.cwiseMin(g.position);
        hi = hi.cwiseMax(g.position);
    }
    Eigen::Vector3d center = 0.5 * (lo + hi);
    double radius = 0.0;
    for (const auto& g : scn.primitives)
        radius = std::max(radius,
                          (g.position - center).norm() + 3.0 * g.scale.maxCoeff());
    return {center, radius};
}

std::vector<Camera> default_view_ring(const scene::GaussianScene& scn, size_t m,
                                      int width, int height) {
    if (m < 1)
        throw std::runtime_error("default_view_ring: m must be >= 1");
    auto [center, radius] = bounding_sphere(scn);
    if (radius < 1e-9)
        throw std::runtime_error("default_view_ring: degenerate scene (zero radius)");

    // half-FOV 45 deg across the smaller image dimension; the sphere subtends
    // asin(1/1.5) ~ 41.8 deg from 1.5x radius, so it always fits
    double focal = 0.5 * std::min(width, height);
    double dist = 1.5 * radius;
    double elev = 30.0 * M_PI / 180.0;
    std::vector<Camera> cams;
    cams.reserve(m);
    for (size_t v = 0; v < m; ++v) {
        double az = 2.0 * M_PI * static_cast<double>(v) / static_cast<double>(m);
        Eigen::Vector3d dir(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                            std::sin(elev));
        Eigen::Vector3d eye = center + dist * dir;
        cams.push_back(Camera::look_at(eye, center, {0.0, 0.0, 1.0}, focal, focal, width,
                                       height, 0.05 * radius, 4.0 * radius));
    }
    return cams;
}

void save_weights(const WeightRender& wr, const std::filesystem::path& path) {
    std::ostringstream os(std::ios::binary);
    os.write("SSWT", 4);
    for (const auto& r : wr.records) {
        write_u16(os, r.x);
        write_u16(os, r.y);
        write_u32(os, r.gaussian);
        write_f32(os, static_cast<float>(r.weight));
    }
    write_file_atomic(path, os.str());
}

std::vector<WeightRecord> load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open weight dump: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SSWT", 4) != 0)
        throw std::runtime_error("bad weight dump magic in " + path.string());
    std::vector<WeightRecord> out;
    while (is.peek() != EOF) {
        WeightRecord r;
        r.x = read_u16(is);
        r.y = read_u16(is);
        r.gaussian = read_u32(is);
        r.weight = read_f32(is);
        out.push_back(r);
    }
    return out;
}

void save_ppm(const Image& img, const std::filesystem::path& path) {
    std::ostringstream os(std::ios::binary);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (double v : img.rgb)
        os.put(static_cast<char>(
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    write_file_atomic(path, os.str());
}

}  // namespace seqsplat::raster
