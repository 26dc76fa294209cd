// Triangle mesh with a canonical base shape plus learnable offsets, adjacency
// with non-manifold rejection, differential operators, and midpoint upsampling.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "af/core/vec.hpp"
#include "af/deform/fields.hpp"

namespace af {

struct TriMesh {
    std::vector<Vec3> vertices;            // canonical base positions
    std::vector<Vec3> offsets;             // learnable displacements, same length
    std::vector<std::array<int, 3>> faces; // 0-based indices
    std::vector<int> region_labels;        // per-vertex material region

    int vertex_count() const { return int(vertices.size()); }
    int face_count() const { return int(faces.size()); }

    Vec3 effective(int i) const { return vertices[i] + offsets[i]; }

    std::vector<Vec3> effective_vertices() const {
        std::vector<Vec3> out(vertices.size());
        for (size_t i = 0; i < vertices.size(); ++i) out[i] = vertices[i] + offsets[i];
        return out;
    }

    void validate() const {
        if (offsets.size() != vertices.size())
            throw std::runtime_error("mesh: offsets/vertices size mismatch");
        if (!region_labels.empty() && region_labels.size() != vertices.size())
            throw std::runtime_error("mesh: region_labels size mismatch");
        const int m = vertex_count();
        for (size_t f = 0; f < faces.size(); ++f) {
            const auto& t = faces[f];
            for (int c = 0; c < 3; ++c)
                if (t[c] < 0 || t[c] >= m)
                    throw std::runtime_error("mesh: face " + std::to_string(f) + " index out of range");
            if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                throw std::runtime_error("mesh: face " + std::to_string(f) + " repeats a vertex");
        }
    }
};

struct MeshAdjacency {
    std::vector<std::vector<int>> vertex_neighbors;   // sorted per vertex
    std::vector<std::pair<int, int>> face_pairs;      // (face_i < face_j) sharing an edge
    std::vector<std::pair<int, int>> edges;           // (v_lo < v_hi), sorted
};

inline MeshAdjacency build_adjacency(const TriMesh& mesh) {
    mesh.validate();
    const int m = mesh.vertex_count();
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (int f = 0; f < mesh.face_count(); ++f) {
        const auto& t = mesh.faces[f];
        for (int c = 0; c < 3; ++c) {
            int a = t[c], b = t[(c + 1) % 3];
            auto key = std::minmax(a, b);
            auto& lst = edge_faces[{key.first, key.second}];
            lst.push_back(f);
            if (lst.size() > 2)
                throw std::runtime_error("mesh: non-manifold edge (" + std::to_string(key.first) + "," +
                                         std::to_string(key.second) + ") shared by >2 faces");
        }
    }
    MeshAdjacency adj;
    adj.vertex_neighbors.assign(m, {});
    adj.edges.reserve(edge_faces.size());
    for (const auto& [e, fl] : edge_faces) {
        adj.edges.push_back(e);
        adj.vertex_neighbors[e.first].push_back(e.second);
        adj.vertex_neighbors[e.second].push_back(e.first);
        if (fl.size() == 2)
            adj.face_pairs.push_back(std::minmax(fl[0], fl[1]));
    }
    for (auto& nb : adj.vertex_neighbors) std::sort(nb.begin(), nb.end());
    std::sort(adj.face_pairs.begin(), adj.face_pairs.end());
    return adj;
}

// Area-weighted vertex normals of an arbitrary position field over the faces.
inline std::vector<Vec3> vertex_normals(const std::vector<Vec3>& pos,
                                        const std::vector<std::array<int, 3>>& faces) {
    std::vector<Vec3> acc(pos.size(), Vec3{0, 0, 0});
    for (const auto& t : faces) {
        Vec3 n = cross(pos[t[1]] - pos[t[0]], pos[t[2]] - pos[t[0]]); // length = 2*area
        acc[t[0]] += n;
        acc[t[1]] += n;
        acc[t[2]] += n;
    }
    for (size_t i = 0; i < acc.size(); ++i) {
        double len = length(acc[i]);
        if (len < 1e-14)
            throw std::runtime_error("mesh: vertex " + std::to_string(i) + " has degenerate incident faces");
        acc[i] = acc[i] / len;
    }
    return acc;
}

inline std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
    return vertex_normals(mesh.effective_vertices(), mesh.faces);
}

// Uniform graph Laplacian: delta_i = v_i - mean(neighbors of v_i).
inline std::vector<Vec3> laplacian_deltas(const TriMesh& mesh, const MeshAdjacency& adj) {
    const int m = mesh.vertex_count();
    if (int(adj.vertex_neighbors.size()) != m)
        throw std::runtime_error("mesh: adjacency size mismatch");
    std::vector<Vec3> out(m);
    for (int i = 0; i < m; ++i) {
        const auto& nb = adj.vertex_neighbors[i];
        if (nb.empty())
            throw std::runtime_error("mesh: isolated vertex " + std::to_string(i));
        Vec3 mean{0, 0, 0};
        for (int j : nb) mean += mesh.effective(j);
        out[i] = mesh.effective(i) - mean / double(nb.size());
    }
    return out;
}

// One 1-to-4 split at edge midpoints. Midpoint attributes (offsets, labels,
// blend fields) are the mean of the edge endpoints; base positions likewise.
inline std::pair<TriMesh, BlendFields> upsample_midpoint(const TriMesh& mesh, const BlendFields& fields) {
    mesh.validate();
    const int m = mesh.vertex_count();
    if (fields.count != m)
        throw std::runtime_error("mesh: fields/vertex count mismatch");
    std::map<std::pair<int, int>, int> midpoint;
    TriMesh out;
    out.vertices = mesh.vertices;
    out.offsets = mesh.offsets;
    out.region_labels = mesh.region_labels.empty() ? std::vector<int>(m, 0) : mesh.region_labels;
    auto mid_of = [&](int a, int b) -> int {
        auto key = std::minmax(a, b);
        auto it = midpoint.find(key);
        if (it != midpoint.end()) return it->second;
        int idx = int(out.vertices.size());
        out.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]) * 0.5);
        out.offsets.push_back((mesh.offsets[a] + mesh.offsets[b]) * 0.5);
        out.region_labels.push_back(int(std::llround(0.5 * (out.region_labels[a] + out.region_labels[b]))));
        midpoint[key] = idx;
        return idx;
    };
    out.faces.reserve(mesh.faces.size() * 4);
    for (const auto& t : mesh.faces) {
        int m01 = mid_of(t[0], t[1]);
        int m12 = mid_of(t[1], t[2]);
        int m20 = mid_of(t[2], t[0]);
        out.faces.push_back({t[0], m01, m20});
        out.faces.push_back({t[1], m12, m01});
        out.faces.push_back({t[2], m20, m12});
        out.faces.push_back({m01, m12, m20});
    }
    BlendFields of = BlendFields::zeros(int(out.vertices.size()), fields.n_e, fields.n_j);
    const size_t se = size_t(fields.n_e) * 3, sp = size_t(fields.n_j) * 27, sw = fields.n_j;
    for (int v = 0; v < m; ++v) {
        std::copy(fields.e_at(v), fields.e_at(v) + se, of.e_at(v));
        std::copy(fields.p_at(v), fields.p_at(v) + sp, of.p_at(v));
        std::copy(fields.w_at(v), fields.w_at(v) + sw, of.w_at(v));
    }
    for (const auto& [edge, idx] : midpoint) {
        int a = edge.first, b = edge.second;
        for (size_t c = 0; c < se; ++c) of.e_at(idx)[c] = 0.5 * (fields.e_at(a)[c] + fields.e_at(b)[c]);
        for (size_t c = 0; c < sp; ++c) of.p_at(idx)[c] = 0.5 * (fields.p_at(a)[c] + fields.p_at(b)[c]);
        for (size_t c = 0; c < sw; ++c) of.w_at(idx)[c] = 0.5 * (fields.w_at(a)[c] + fields.w_at(b)[c]);
    }
    return {std::move(out), std::move(of)};
}

// Icosphere generator: canonical unit-sphere test geometry.
inline TriMesh make_icosphere(int subdivisions, double radius = 1.0) {
    TriMesh mesh;
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    const double base[12][3] = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                                {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                                {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& p : base) mesh.vertices.push_back(normalized(Vec3{p[0], p[1], p[2]}));
    const int idx[20][3] = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                            {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                            {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                            {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (auto& f : idx) mesh.faces.push_back({f[0], f[1], f[2]});
    mesh.offsets.assign(mesh.vertices.size(), Vec3{0, 0, 0});
    mesh.region_labels.assign(mesh.vertices.size(), 0);
    for (int s = 0; s < subdivisions; ++s) {
        BlendFields dummy = BlendFields::zeros(mesh.vertex_count(), 1, 1);
        mesh = upsample_midpoint(mesh, dummy).first;
        for (auto& v : mesh.vertices) v = normalized(v);
    }
    for (auto& v : mesh.vertices) v = v * radius;
    mesh.offsets.assign(mesh.vertices.size(), Vec3{0, 0, 0});
    mesh.region_labels.assign(mesh.vertices.size(), 0);
    return mesh;
}

} // namespace af
