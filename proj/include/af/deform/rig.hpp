#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <vector>

#include "af/core/rng.hpp"
#include "af/core/vec.hpp"
#include "af/deform/fields.hpp"
#include "af/mesh/trimesh.hpp"

namespace af {

// Synthetic articulated rig: seeded smooth analytic blend fields over space,
// a template vertex set for nearest-vertex pseudo ground truth, and one joint
// optionally designated as the jaw.
struct DeformationRig {
    int n_j = 4;
    int n_e = 10;
    int jaw = -1; // joint index, -1 when the rig has no jaw
    Vec3 jaw_axis{1, 0, 0};
    double jaw_ref_angle = 0.0;
    uint64_t seed = 0;
    std::vector<Vec3> joints; // rest centers
    std::vector<double> sigma;
    std::vector<Vec3> template_verts;
    BlendFields template_fields;
};

// Joint rotations + translations for one frame, plus expression coefficients.
struct PoseExpr {
    std::vector<Rigid> theta;
    std::vector<double> psi;
};

inline void validate_pose(const PoseExpr& pose, const DeformationRig& rig) {
    if (int(pose.theta.size()) != rig.n_j) throw std::runtime_error("pose: joint count mismatch");
    if (int(pose.psi.size()) != rig.n_e) throw std::runtime_error("pose: expression count mismatch");
    for (const Rigid& t : pose.theta) {
        Mat3 sq = t.R * transpose(t.R);
        double err = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) err = std::max(err, std::abs(sq(i, j) - (i == j ? 1.0 : 0.0)));
        double det = t.R(0, 0) * (t.R(1, 1) * t.R(2, 2) - t.R(1, 2) * t.R(2, 1)) -
                     t.R(0, 1) * (t.R(1, 0) * t.R(2, 2) - t.R(1, 2) * t.R(2, 0)) +
                     t.R(0, 2) * (t.R(1, 0) * t.R(2, 1) - t.R(1, 1) * t.R(2, 0));
        if (err > 1e-9 || std::abs(det - 1.0) > 1e-9)
            throw std::runtime_error("pose: rotation is not special orthogonal");
    }
}

inline PoseExpr rest_pose(const DeformationRig& rig) {
    PoseExpr p;
    p.theta.assign(rig.n_j, Rigid::identity());
    p.psi.assign(rig.n_e, 0.0);
    return p;
}

namespace detail {

inline Vec3 seeded_unit(uint64_t seed, uint64_t tag, uint64_t idx) {
    double z = 2.0 * keyed_uniform(seed, tag, idx, 0) - 1.0;
    double phi = 2.0 * kPi * keyed_uniform(seed, tag, idx, 1);
    double s = std::sqrt(std::fmax(0.0, 1.0 - z * z));
    return {s * std::cos(phi), s * std::sin(phi), z};
}

inline double seeded_range(uint64_t seed, uint64_t tag, uint64_t idx, uint64_t comp, double lo, double hi) {
    return lo + (hi - lo) * keyed_uniform(seed, tag, idx, comp);
}

} // namespace detail

// Smooth positive kernels normalized to a partition of unity.
inline void analytic_weights(const DeformationRig& rig, Vec3 x, double* w) {
    double total = 0.0;
    for (int j = 0; j < rig.n_j; ++j) {
        Vec3 d = x - rig.joints[j];
        double s2 = rig.sigma[j] * rig.sigma[j];
        w[j] = std::exp(-0.5 * dot(d, d) / s2) + 1e-12;
        total += w[j];
    }
    for (int j = 0; j < rig.n_j; ++j) w[j] /= total;
}

// Low-frequency seeded sinusoid fields; amplitudes keep correctives small
// relative to the skinning term.
inline void analytic_fields_at(const DeformationRig& rig, Vec3 x, double* E, double* P, double* W) {
    analytic_weights(rig, x, W);
    for (int e = 0; e < rig.n_e; ++e) {
        Vec3 d = detail::seeded_unit(rig.seed, 101, uint64_t(e));
        Vec3 f = detail::seeded_unit(rig.seed, 102, uint64_t(e)) * detail::seeded_range(rig.seed, 103, uint64_t(e), 0, 0.8, 2.2);
        double phase = 2.0 * kPi * keyed_uniform(rig.seed, 104, uint64_t(e), 0);
        double amp = detail::seeded_range(rig.seed, 105, uint64_t(e), 0, 0.02, 0.06);
        double s = amp * std::sin(dot(f, x) + phase);
        E[e * 3 + 0] = d.x * s;
        E[e * 3 + 1] = d.y * s;
        E[e * 3 + 2] = d.z * s;
    }
    for (int j = 0; j < rig.n_j; ++j) {
        for (int q = 0; q < 9; ++q) {
            uint64_t idx = uint64_t(j) * 9 + q;
            Vec3 d = detail::seeded_unit(rig.seed, 201, idx);
            Vec3 f = detail::seeded_unit(rig.seed, 202, idx) * detail::seeded_range(rig.seed, 203, idx, 0, 0.8, 2.0);
            double phase = 2.0 * kPi * keyed_uniform(rig.seed, 204, idx, 0);
            double amp = detail::seeded_range(rig.seed, 205, idx, 0, 0.004, 0.012);
            double s = amp * std::sin(dot(f, x) + phase);
            P[(j * 9 + q) * 3 + 0] = d.x * s;
            P[(j * 9 + q) * 3 + 1] = d.y * s;
            P[(j * 9 + q) * 3 + 2] = d.z * s;
        }
    }
}

inline BlendFields analytic_fields(const DeformationRig& rig, const std::vector<Vec3>& pts) {
    BlendFields f = BlendFields::zeros(int(pts.size()), rig.n_e, rig.n_j);
    for (int v = 0; v < f.count; ++v)
        analytic_fields_at(rig, pts[v], f.e_at(v), f.p_at(v), f.w_at(v));
    return f;
}

// Joints placed along the vertical extent of the template with seeded lateral
// jitter; the last joint is the jaw (front-lower placement) when present.
inline DeformationRig make_rig(const std::vector<Vec3>& template_verts, int n_j, int n_e,
                               uint64_t seed, bool with_jaw, double jaw_ref_angle) {
    if (template_verts.empty()) throw std::runtime_error("make_rig: empty template");
    DeformationRig rig;
    rig.n_j = n_j;
    rig.n_e = n_e;
    rig.seed = seed;
    Vec3 lo = template_verts[0], hi = template_verts[0];
    for (const Vec3& p : template_verts) {
        for (int c = 0; c < 3; ++c) {
            lo[c] = std::min(lo[c], p[c]);
            hi[c] = std::max(hi[c], p[c]);
        }
    }
    Vec3 center = 0.5 * (lo + hi);
    double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z, 1e-6});
    rig.joints.resize(n_j);
    rig.sigma.resize(n_j);
    for (int j = 0; j < n_j; ++j) {
        double fz = n_j > 1 ? double(j) / (n_j - 1) : 0.5;
        Vec3 p = {center.x, center.y, lo.z + fz * (hi.z - lo.z)};
        p.x += extent * 0.1 * (keyed_uniform(seed, 301, uint64_t(j), 0) - 0.5);
        p.y += extent * 0.1 * (keyed_uniform(seed, 302, uint64_t(j), 0) - 0.5);
        rig.joints[j] = p;
        rig.sigma[j] = extent * detail::seeded_range(seed, 303, uint64_t(j), 0, 0.35, 0.55);
    }
    if (with_jaw) {
        rig.jaw = n_j - 1;
        rig.joints[rig.jaw] = {center.x, lo.y + 0.25 * (hi.y - lo.y), lo.z + 0.3 * (hi.z - lo.z)};
        rig.jaw_axis = {1, 0, 0};
        rig.jaw_ref_angle = jaw_ref_angle;
    }
    rig.template_verts = template_verts;
    rig.template_fields = analytic_fields(rig, template_verts);
    return rig;
}

// Fields of the nearest template vertex (Euclidean; ties pick the lowest index).
inline BlendFields pseudo_gt_fields(const DeformationRig& rig, const std::vector<Vec3>& pts) {
    BlendFields out = BlendFields::zeros(int(pts.size()), rig.n_e, rig.n_j);
    const int nt = int(rig.template_verts.size());
    for (int v = 0; v < out.count; ++v) {
        int best = 0;
        double bd = 1e300;
        for (int t = 0; t < nt; ++t) {
            Vec3 d = pts[v] - rig.template_verts[t];
            double dd = dot(d, d);
            if (dd < bd) {
                bd = dd;
                best = t;
            }
        }
        const double* E = rig.template_fields.e_at(best);
        const double* P = rig.template_fields.p_at(best);
        const double* W = rig.template_fields.w_at(best);
        std::copy(E, E + size_t(rig.n_e) * 3, out.e_at(v));
        std::copy(P, P + size_t(rig.n_j) * 27, out.p_at(v));
        std::copy(W, W + rig.n_j, out.w_at(v));
    }
    return out;
}

// Blended affine of the jaw-open reference pose per template vertex; the
// remap applies its inverse so the stored canonical state carries the open
// jaw.  Exact round trip with inverse=true since the same per-index affine is
// used both ways.
inline TriMesh jaw_open_remap(const TriMesh& mesh, const DeformationRig& rig, bool inverse = false) {
    TriMesh out = mesh;
    if (rig.jaw < 0) {
        std::fprintf(stderr, "jaw_open_remap: rig has no jaw joint; mesh unchanged\n");
        return out;
    }
    if (rig.jaw_ref_angle == 0.0) return out; // identity reference
    if (mesh.vertices.size() != rig.template_verts.size())
        throw std::runtime_error("jaw_open_remap: mesh is not aligned with the rig template");
    Mat3 R = Mat3::axis_angle(rig.jaw_axis, rig.jaw_ref_angle);
    Vec3 jc = rig.joints[rig.jaw];
    std::vector<double> w(rig.n_j);
    for (size_t v = 0; v < out.vertices.size(); ++v) {
        const double* W = rig.template_fields.w_at(int(v));
        double wj = W[rig.jaw];
        // A = sum_j W_j T_j with T_jaw the reference rotation about its center
        // and all other joints identity.
        Mat3 A;
        Vec3 b{0, 0, 0};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) A(r, c) = (1.0 - wj) * (r == c ? 1.0 : 0.0) + wj * R(r, c);
        b = wj * (jc - R * jc);
        Vec3 p = out.vertices[v];
        if (inverse) {
            out.vertices[v] = A * p + b;
        } else {
            // Solve A q + b = p (3x3 Cramer).
            Vec3 rhs = p - b;
            Vec3 c0 = {A(0, 0), A(1, 0), A(2, 0)};
            Vec3 c1 = {A(0, 1), A(1, 1), A(2, 1)};
            Vec3 c2 = {A(0, 2), A(1, 2), A(2, 2)};
            double det = dot(c0, cross(c1, c2));
            if (std::abs(det) < 1e-12) throw std::runtime_error("jaw_open_remap: singular blend affine");
            out.vertices[v] = {dot(rhs, cross(c1, c2)) / det,
                               dot(c0, cross(rhs, c2)) / det,
                               dot(c0, cross(c1, rhs)) / det};
        }
    }
    return out;
}

} // namespace af
