// Software rasterizer producing the deferred-shading G-buffer: per pixel the
// nearest front-facing triangle at the pixel center, perspective-correct
// barycentrics, and interpolated canonical/deformed positions and normals.
// Gradients use the frozen pixel-to-triangle assignment: build_interp_csr
// turns the G-buffer into a linear map from vertex attributes to covered
// pixels (no visibility derivative).
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "af/core/image.hpp"
#include "af/core/rng.hpp"
#include "af/core/thread.hpp"
#include "af/core/vec.hpp"
#include "af/nn/tape.hpp"
#include "af/raster/camera.hpp"

namespace af {

struct GBuffer {
    int width = 0, height = 0;
    std::vector<int> face;      // per pixel, -1 when empty
    std::vector<double> bary;   // 3 per pixel
    std::vector<double> depth;  // camera z
    std::vector<Vec3> xc, xd, nd;
    std::vector<uint8_t> mask;
    std::vector<int> pixels;    // covered pixel indices, scan order
    uint64_t topology_stamp = 0;

    int covered() const { return int(pixels.size()); }
};

inline uint64_t topology_stamp(size_t vertex_count, const std::vector<std::array<int, 3>>& faces) {
    uint64_t h = splitmix64(vertex_count * 0x9e3779b97f4a7c15ULL + faces.size());
    for (size_t f = 0; f < faces.size(); f += 97)
        h = hash_combine(h, uint64_t(faces[f][0]) << 40 | uint64_t(faces[f][1]) << 20 | uint64_t(faces[f][2]));
    return h;
}

inline GBuffer rasterize(const PinholeCamera& cam,
                         const std::vector<Vec3>& deformed,
                         const std::vector<Vec3>& canonical,
                         const std::vector<Vec3>& normals,
                         const std::vector<std::array<int, 3>>& faces) {
    if (deformed.size() != canonical.size() || deformed.size() != normals.size())
        throw std::runtime_error("raster: attribute arrays misaligned");
    cam.validate();
    GBuffer gb;
    gb.width = cam.width;
    gb.height = cam.height;
    const size_t np = size_t(cam.width) * cam.height;
    gb.face.assign(np, -1);
    gb.bary.assign(np * 3, 0.0);
    gb.depth.assign(np, 0.0);
    gb.xc.assign(np, Vec3{0, 0, 0});
    gb.xd.assign(np, Vec3{0, 0, 0});
    gb.nd.assign(np, Vec3{0, 0, 0});
    gb.mask.assign(np, 0);
    gb.topology_stamp = topology_stamp(deformed.size(), faces);

    struct Proj {
        double x, y, z;
        bool ok;
    };
    std::vector<Proj> proj(deformed.size());
    parallel_for(int64_t(deformed.size()), 1024, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i)
            proj[i].ok = cam.project(deformed[i], proj[i].x, proj[i].y, proj[i].z);
    });

    // Row tiles own disjoint pixel ranges, so parallel writes never collide.
    const int tile_rows = 16;
    const int64_t tiles = (cam.height + tile_rows - 1) / tile_rows;
    parallel_for(tiles, 1, [&](int64_t tb, int64_t te) {
        for (int64_t t = tb; t < te; ++t) {
            const int y0 = int(t) * tile_rows;
            const int y1 = std::min(cam.height, y0 + tile_rows);
            for (size_t f = 0; f < faces.size(); ++f) {
                const auto& tri = faces[f];
                const Proj& A = proj[tri[0]];
                const Proj& B = proj[tri[1]];
                const Proj& C = proj[tri[2]];
                if (!A.ok || !B.ok || !C.ok) continue; // fully in-frustum triangles only
                const double area2 = (B.x - A.x) * (C.y - A.y) - (B.y - A.y) * (C.x - A.x);
                if (area2 <= 0.0) continue; // back-face or degenerate
                double xmin = std::min({A.x, B.x, C.x}), xmax = std::max({A.x, B.x, C.x});
                double ymin = std::min({A.y, B.y, C.y}), ymax = std::max({A.y, B.y, C.y});
                int px0 = std::max(0, int(std::floor(xmin - 0.5)));
                int px1 = std::min(cam.width - 1, int(std::ceil(xmax - 0.5)));
                int py0 = std::max(y0, int(std::floor(ymin - 0.5)));
                int py1 = std::min(y1 - 1, int(std::ceil(ymax - 0.5)));
                if (px0 > px1 || py0 > py1) continue;
                const double inv_area = 1.0 / area2;
                for (int py = py0; py <= py1; ++py) {
                    for (int px = px0; px <= px1; ++px) {
                        const double sx = px + 0.5, sy = py + 0.5;
                        double l0 = ((B.x - sx) * (C.y - sy) - (B.y - sy) * (C.x - sx)) * inv_area;
                        double l1 = ((C.x - sx) * (A.y - sy) - (C.y - sy) * (A.x - sx)) * inv_area;
                        double l2 = 1.0 - l0 - l1;
                        if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
                        // perspective-correct weights
                        double w0 = l0 / A.z, w1 = l1 / B.z, w2 = l2 / C.z;
                        double wsum = w0 + w1 + w2;
                        double z = 1.0 / wsum;
                        size_t p = size_t(py) * cam.width + px;
                        if (gb.face[p] >= 0 && gb.depth[p] <= z) continue;
                        double b0 = w0 * z, b1 = w1 * z, b2 = 1.0 - b0 - b1;
                        gb.face[p] = int(f);
                        gb.depth[p] = z;
                        gb.bary[p * 3 + 0] = b0;
                        gb.bary[p * 3 + 1] = b1;
                        gb.bary[p * 3 + 2] = b2;
                    }
                }
            }
            // attribute pass for this tile
            for (int py = y0; py < y1; ++py)
                for (int px = 0; px < cam.width; ++px) {
                    size_t p = size_t(py) * cam.width + px;
                    int f = gb.face[p];
                    if (f < 0) continue;
                    const auto& tri = faces[f];
                    double b0 = gb.bary[p * 3], b1 = gb.bary[p * 3 + 1], b2 = gb.bary[p * 3 + 2];
                    gb.xc[p] = canonical[tri[0]] * b0 + canonical[tri[1]] * b1 + canonical[tri[2]] * b2;
                    gb.xd[p] = deformed[tri[0]] * b0 + deformed[tri[1]] * b1 + deformed[tri[2]] * b2;
                    gb.nd[p] = normalized(normals[tri[0]] * b0 + normals[tri[1]] * b1 + normals[tri[2]] * b2);
                    gb.mask[p] = 1;
                }
        }
    });
    gb.pixels.reserve(np / 4);
    for (size_t p = 0; p < np; ++p)
        if (gb.mask[p]) gb.pixels.push_back(int(p));
    return gb;
}

// Vertex attributes [M x d] -> covered pixels [P x d] with the G-buffer's
// frozen barycentric weights. Rejects a G-buffer built for other topology.
inline std::shared_ptr<nn::CsrMap> build_interp_csr(const GBuffer& gb,
                                                    size_t vertex_count,
                                                    const std::vector<std::array<int, 3>>& faces) {
    if (gb.topology_stamp != topology_stamp(vertex_count, faces))
        throw std::runtime_error("raster: stale G-buffer (topology changed since rasterization)");
    auto map = std::make_shared<nn::CsrMap>();
    map->begin();
    for (int p : gb.pixels) {
        const auto& tri = faces[gb.face[p]];
        for (int c = 0; c < 3; ++c) map->entry(tri[c], gb.bary[size_t(p) * 3 + c]);
        map->end_row();
    }
    map->finish(int(vertex_count));
    return map;
}

// Debug dump: one PFM per attribute.
inline void dump_gbuffer(const GBuffer& gb, const std::string& dir) {
    auto to_img = [&](int ch, auto fill) {
        Image img(gb.width, gb.height, ch);
        for (int y = 0; y < gb.height; ++y)
            for (int x = 0; x < gb.width; ++x) fill(img, x, y, size_t(y) * gb.width + x);
        return img;
    };
    write_pfm(dir + "/mask.pfm", to_img(1, [&](Image& im, int x, int y, size_t p) {
        im.at(x, y, 0) = float(gb.mask[p]);
    }));
    write_pfm(dir + "/bary.pfm", to_img(3, [&](Image& im, int x, int y, size_t p) {
        for (int c = 0; c < 3; ++c) im.at(x, y, c) = float(gb.bary[p * 3 + c]);
    }));
    write_pfm(dir + "/xc.pfm", to_img(3, [&](Image& im, int x, int y, size_t p) {
        im.at(x, y, 0) = float(gb.xc[p].x); im.at(x, y, 1) = float(gb.xc[p].y); im.at(x, y, 2) = float(gb.xc[p].z);
    }));
    write_pfm(dir + "/xd.pfm", to_img(3, [&](Image& im, int x, int y, size_t p) {
        im.at(x, y, 0) = float(gb.xd[p].x); im.at(x, y, 1) = float(gb.xd[p].y); im.at(x, y, 2) = float(gb.xd[p].z);
    }));
    write_pfm(dir + "/nd.pfm", to_img(3, [&](Image& im, int x, int y, size_t p) {
        im.at(x, y, 0) = float(gb.nd[p].x); im.at(x, y, 1) = float(gb.nd[p].y); im.at(x, y, 2) = float(gb.nd[p].z);
    }));
}

} // namespace af
