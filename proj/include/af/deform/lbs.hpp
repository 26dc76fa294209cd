#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "af/deform/rig.hpp"
#include "af/nn/tape.hpp"

namespace af {

// Rotation features vec(R - I), row-major.
inline void pose_features(const Mat3& R, double* f) {
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) f[r * 3 + c] = R(r, c) - (r == c ? 1.0 : 0.0);
}

inline Vec3 expr_offset(const BlendFields& fields, int v, const std::vector<double>& psi) {
    const double* E = fields.e_at(v);
    Vec3 off{0, 0, 0};
    for (int e = 0; e < fields.n_e; ++e)
        off += psi[e] * Vec3{E[e * 3 + 0], E[e * 3 + 1], E[e * 3 + 2]};
    return off;
}

inline Vec3 pose_offset(const BlendFields& fields, int v, const std::vector<Rigid>& theta) {
    const double* P = fields.p_at(v);
    Vec3 off{0, 0, 0};
    double f[9];
    for (int j = 0; j < fields.n_j; ++j) {
        pose_features(theta[j].R, f);
        const double* Pj = P + size_t(j) * 27;
        for (int q = 0; q < 9; ++q)
            off += f[q] * Vec3{Pj[q * 3 + 0], Pj[q * 3 + 1], Pj[q * 3 + 2]};
    }
    return off;
}

// Linear blend skinning over joint-centered rigid transforms, applied to the
// corrective-displaced vertex.  Weights must already lie on the simplex.
inline std::vector<Vec3> lbs_deform(const std::vector<Vec3>& vertices, const BlendFields& fields,
                                    const DeformationRig& rig, const PoseExpr& pose) {
    if (int(vertices.size()) != fields.count) throw std::runtime_error("lbs: field count mismatch");
    if (fields.n_j != rig.n_j || fields.n_e != rig.n_e) throw std::runtime_error("lbs: rig shape mismatch");
    validate_pose(pose, rig);
    for (int v = 0; v < fields.count; ++v) {
        const double* W = fields.w_at(v);
        double s = 0.0;
        for (int j = 0; j < rig.n_j; ++j) {
            if (W[j] < -1e-12) throw std::runtime_error("lbs: negative skinning weight");
            s += W[j];
        }
        if (std::abs(s - 1.0) > 1e-9) throw std::runtime_error("lbs: weights not normalized");
    }
    std::vector<Vec3> out(vertices.size());
    for (int v = 0; v < fields.count; ++v) {
        Vec3 vhat = vertices[v] + expr_offset(fields, v, pose.psi) + pose_offset(fields, v, pose.theta);
        const double* W = fields.w_at(v);
        Vec3 acc{0, 0, 0};
        for (int j = 0; j < rig.n_j; ++j) {
            const Rigid& T = pose.theta[j];
            Vec3 jc = rig.joints[j];
            acc += W[j] * (T.R * (vhat - jc) + jc + T.t);
        }
        out[v] = acc;
    }
    return out;
}

// Heads over the raw deformation network output
// [M x (3 n_e + 27 n_j + n_j)]: E and P raw, W sigmoid-normalized.
struct FieldNodes {
    int E = -1; // [M x 3 n_e]
    int P = -1; // [M x 27 n_j]
    int W = -1; // [M x n_j], rows on the simplex
};

inline FieldNodes field_heads(nn::Tape& t, int raw, int n_e, int n_j) {
    int ce = 3 * n_e, cp = 27 * n_j;
    FieldNodes f;
    f.E = t.slice_cols(raw, 0, ce);
    f.P = t.slice_cols(raw, ce, ce + cp);
    int pos = t.sigmoid(t.slice_cols(raw, ce + cp, ce + cp + n_j));
    f.W = t.row_div(pos, t.row_sum(pos));
    return f;
}

// Tape mirror of lbs_deform for a fixed pose; x is the canonical node [M x 3].
inline int lbs_tape(nn::Tape& t, int x, const FieldNodes& f, const DeformationRig& rig,
                    const PoseExpr& pose) {
    int vhat = x;
    for (int e = 0; e < rig.n_e; ++e) {
        if (pose.psi[e] == 0.0) continue;
        vhat = t.add(vhat, t.scale(t.slice_cols(f.E, e * 3, e * 3 + 3), pose.psi[e]));
    }
    double feat[9];
    for (int j = 0; j < rig.n_j; ++j) {
        pose_features(pose.theta[j].R, feat);
        double mx = 0.0;
        for (double q : feat) mx = std::max(mx, std::abs(q));
        if (mx < 1e-15) continue;
        nn::Tensor K(27, 3);
        for (int q = 0; q < 9; ++q)
            for (int c = 0; c < 3; ++c) K.at(q * 3 + c, c) = feat[q];
        vhat = t.add(vhat, t.matmul(t.slice_cols(f.P, j * 27, (j + 1) * 27), t.leaf(K, false)));
    }
    int out = -1;
    for (int j = 0; j < rig.n_j; ++j) {
        const Rigid& T = pose.theta[j];
        Vec3 jc = rig.joints[j];
        Mat3 Rt = transpose(T.R);
        nn::Tensor Rt_t(3, 3);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) Rt_t.at(r, c) = Rt(r, c);
        Vec3 shift = jc + T.t - T.R * jc;
        int y = t.add_row(t.matmul(vhat, t.leaf(Rt_t, false)),
                          t.leaf(nn::Tensor::row3(shift.x, shift.y, shift.z), false));
        int term = t.row_scale(y, t.slice_cols(f.W, j, j + 1));
        out = out < 0 ? term : t.add(out, term);
    }
    return out;
}

} // namespace af
