#include <catch_amalgamated.hpp>

#include "af/deform/lbs.hpp"
#include "af/deform/rig.hpp"
#include "af/mesh/trimesh.hpp"

using namespace af;

namespace {

DeformationRig test_rig(bool with_jaw = true, double jaw_ref = 0.3) {
    TriMesh m = make_icosphere(2);
    return make_rig(m.vertices, 4, 10, 11, with_jaw, jaw_ref);
}

PoseExpr random_pose(const DeformationRig& rig, uint64_t seed, double amp = 0.2) {
    PoseExpr p = rest_pose(rig);
    Rng rng(seed);
    for (int j = 0; j < rig.n_j; ++j) {
        Vec3 axis = normalized(Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        p.theta[j].R = Mat3::axis_angle(axis, rng.uniform(-amp, amp));
        p.theta[j].t = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
    }
    for (int e = 0; e < rig.n_e; ++e) p.psi[e] = rng.uniform(-0.8, 0.8);
    return p;
}

} // namespace

TEST_CASE("analytic skinning weights live on the simplex") {
    DeformationRig rig = test_rig();
    Rng rng(4);
    std::vector<double> w(rig.n_j);
    for (int i = 0; i < 200; ++i) {
        Vec3 x{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
        analytic_weights(rig, x, w.data());
        double s = 0.0;
        for (double v : w) {
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("rest pose is an exact fixed point of lbs") {
    DeformationRig rig = test_rig();
    auto out = lbs_deform(rig.template_verts, rig.template_fields, rig, rest_pose(rig));
    for (size_t i = 0; i < out.size(); ++i)
        CHECK_THAT(length(out[i] - rig.template_verts[i]), Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("global translation moves every vertex rigidly") {
    DeformationRig rig = test_rig();
    PoseExpr p = rest_pose(rig);
    Vec3 shift{0.3, -0.2, 0.1};
    for (auto& t : p.theta) t.t = shift;
    auto out = lbs_deform(rig.template_verts, rig.template_fields, rig, p);
    for (size_t i = 0; i < out.size(); ++i)
        CHECK_THAT(length(out[i] - (rig.template_verts[i] + shift)),
                   Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("global rotation about a shared center is rigid when correctives vanish") {
    // with identical R for all joints, LBS reduces to R(v + B_P - c) + c
    // where the P features are shared; the corrective changes the shape, so
    // zero the P field to observe the pure rigid motion
    DeformationRig rig = test_rig();
    BlendFields f = rig.template_fields;
    std::fill(f.P.begin(), f.P.end(), 0.0);
    PoseExpr p = rest_pose(rig);
    Mat3 R = Mat3::axis_angle(normalized(Vec3{0.2, 1.0, -0.4}), 0.7);
    for (int j = 0; j < rig.n_j; ++j) {
        p.theta[j].R = R;
        // choose t_j so every joint realizes the same world rotation about the origin
        p.theta[j].t = R * rig.joints[j] - rig.joints[j];
    }
    auto out = lbs_deform(rig.template_verts, f, rig, p);
    for (size_t i = 0; i < out.size(); ++i)
        CHECK_THAT(length(out[i] - R * rig.template_verts[i]), Catch::Matchers::WithinAbs(0.0, 1e-10));
}

TEST_CASE("expression offsets are linear in psi") {
    DeformationRig rig = test_rig();
    PoseExpr p0 = rest_pose(rig);
    PoseExpr p1 = rest_pose(rig), p2 = rest_pose(rig), p12 = rest_pose(rig);
    p1.psi[2] = 0.5;
    p2.psi[7] = -0.3;
    p12.psi[2] = 0.5;
    p12.psi[7] = -0.3;
    auto base = lbs_deform(rig.template_verts, rig.template_fields, rig, p0);
    auto a = lbs_deform(rig.template_verts, rig.template_fields, rig, p1);
    auto b = lbs_deform(rig.template_verts, rig.template_fields, rig, p2);
    auto ab = lbs_deform(rig.template_verts, rig.template_fields, rig, p12);
    for (size_t i = 0; i < base.size(); ++i) {
        Vec3 lhs = ab[i] - base[i];
        Vec3 rhs = (a[i] - base[i]) + (b[i] - base[i]);
        CHECK_THAT(length(lhs - rhs), Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
}

TEST_CASE("pose features vanish at identity so correctives are inactive at rest") {
    double f[9];
    pose_features(Mat3::identity(), f);
    for (int i = 0; i < 9; ++i) CHECK(f[i] == 0.0);
    Mat3 R = Mat3::axis_angle({0, 0, 1}, 0.4);
    pose_features(R, f);
    // vec(R - I) row-major
    CHECK_THAT(f[0], Catch::Matchers::WithinAbs(std::cos(0.4) - 1.0, 1e-15));
    CHECK_THAT(f[1], Catch::Matchers::WithinAbs(-std::sin(0.4), 1e-15));
    CHECK_THAT(f[3], Catch::Matchers::WithinAbs(std::sin(0.4), 1e-15));
    CHECK_THAT(f[8], Catch::Matchers::WithinAbs(0.0, 1e-15));
}

TEST_CASE("pseudo ground truth fields are exact at template vertices") {
    DeformationRig rig = test_rig();
    BlendFields f = pseudo_gt_fields(rig, rig.template_verts);
    CHECK(f.E == rig.template_fields.E);
    CHECK(f.P == rig.template_fields.P);
    CHECK(f.W == rig.template_fields.W);
}

TEST_CASE("pseudo ground truth picks the nearest template vertex") {
    DeformationRig rig = test_rig();
    Vec3 q = rig.template_verts[17] + Vec3{1e-4, -5e-5, 2e-5};
    BlendFields f = pseudo_gt_fields(rig, {q});
    for (int j = 0; j < rig.n_j; ++j) CHECK(f.w_at(0)[j] == rig.template_fields.w_at(17)[j]);
}

TEST_CASE("jaw open remap is exactly invertible and identity without a jaw") {
    TriMesh m = make_icosphere(2);
    DeformationRig rig = make_rig(m.vertices, 4, 10, 11, true, 0.3);
    TriMesh remapped = jaw_open_remap(m, rig);
    bool moved = false;
    for (size_t i = 0; i < m.vertices.size(); ++i)
        if (length(remapped.vertices[i] - m.vertices[i]) > 1e-6) moved = true;
    CHECK(moved);
    TriMesh back = jaw_open_remap(remapped, rig, true);
    for (size_t i = 0; i < m.vertices.size(); ++i)
        CHECK_THAT(length(back.vertices[i] - m.vertices[i]), Catch::Matchers::WithinAbs(0.0, 1e-10));

    DeformationRig flat = make_rig(m.vertices, 4, 10, 11, true, 0.0);
    TriMesh same = jaw_open_remap(m, flat);
    for (size_t i = 0; i < m.vertices.size(); ++i)
        CHECK(length(same.vertices[i] - m.vertices[i]) == 0.0);
}

TEST_CASE("a full-weight jaw vertex remaps by the rigid inverse") {
    TriMesh m = make_icosphere(1);
    DeformationRig rig = make_rig(m.vertices, 4, 10, 11, true, 10.0 * kPi / 180.0);
    // force one vertex to pure jaw ownership
    int v = 5;
    for (int j = 0; j < rig.n_j; ++j) rig.template_fields.w_at(v)[j] = (j == rig.jaw) ? 1.0 : 0.0;
    TriMesh remapped = jaw_open_remap(m, rig);
    Mat3 R = Mat3::axis_angle(rig.jaw_axis, rig.jaw_ref_angle);
    Vec3 jc = rig.joints[rig.jaw];
    Vec3 expect = transpose(R) * (m.vertices[v] - jc) + jc;
    CHECK_THAT(length(remapped.vertices[v] - expect), Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("field heads split the raw output and normalize skinning rows") {
    int n_e = 3, n_j = 4;
    int width = 3 * n_e + 27 * n_j + n_j;
    nn::Tensor raw(5, width);
    Rng rng(9);
    for (auto& v : raw.v) v = rng.uniform(-2, 2);
    nn::Tape t;
    int r = t.leaf(raw, false);
    FieldNodes f = field_heads(t, r, n_e, n_j);
    CHECK(t.val(f.E).d == 3 * n_e);
    CHECK(t.val(f.P).d == 27 * n_j);
    CHECK(t.val(f.W).d == n_j);
    for (int i = 0; i < 5; ++i) {
        double s = 0.0;
        for (int j = 0; j < n_j; ++j) {
            double w = t.val(f.W).at(i, j);
            CHECK(w > 0.0);
            s += w;
        }
        CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
        // sigmoid ratios: W_ij = sig(x_ij) / sum_k sig(x_ik)
        double den = 0.0;
        for (int j = 0; j < n_j; ++j) den += 1.0 / (1.0 + std::exp(-raw.at(i, 3 * n_e + 27 * n_j + j)));
        for (int j = 0; j < n_j; ++j) {
            double sig = 1.0 / (1.0 + std::exp(-raw.at(i, 3 * n_e + 27 * n_j + j)));
            CHECK_THAT(t.val(f.W).at(i, j), Catch::Matchers::WithinAbs(sig / den, 1e-12));
        }
    }
}

TEST_CASE("tape lbs agrees with the scalar path on exact fields") {
    DeformationRig rig = test_rig();
    PoseExpr pose = random_pose(rig, 21);
    auto scalar = lbs_deform(rig.template_verts, rig.template_fields, rig, pose);

    // stage exact fields as raw tensors through the head layout: invert the
    // sigmoid normalization by staging logits whose ratios match W
    int M = int(rig.template_verts.size());
    nn::Tape t;
    nn::Tensor E(M, 3 * rig.n_e), P(M, 27 * rig.n_j), W(M, rig.n_j), X(M, 3);
    for (int v = 0; v < M; ++v) {
        for (int k = 0; k < 3 * rig.n_e; ++k) E.at(v, k) = rig.template_fields.e_at(v)[k];
        for (int k = 0; k < 27 * rig.n_j; ++k) P.at(v, k) = rig.template_fields.p_at(v)[k];
        for (int j = 0; j < rig.n_j; ++j) W.at(v, j) = rig.template_fields.w_at(v)[j];
        for (int c = 0; c < 3; ++c) X.at(v, c) = rig.template_verts[v][c];
    }
    FieldNodes f;
    f.E = t.leaf(E, false);
    f.P = t.leaf(P, false);
    f.W = t.leaf(W, false);
    int x = t.leaf(X, false);
    int out = lbs_tape(t, x, f, rig, pose);
    const nn::Tensor& o = t.val(out);
    REQUIRE(o.n == M);
    for (int v = 0; v < M; ++v) {
        Vec3 got{o.at(v, 0), o.at(v, 1), o.at(v, 2)};
        CHECK_THAT(length(got - scalar[v]), Catch::Matchers::WithinAbs(0.0, 1e-11));
    }
}

TEST_CASE("tape lbs gradients match finite differences") {
    TriMesh m = make_icosphere(0);
    DeformationRig rig = make_rig(m.vertices, 3, 2, 5, true, 0.2);
    PoseExpr pose = random_pose(rig, 33);
    int M = int(m.vertices.size());
    int width = 3 * rig.n_e + 27 * rig.n_j + rig.n_j;
    Rng rng(13);
    nn::Tensor raw(M, width), X(M, 3), proj;
    for (auto& v : raw.v) v = rng.uniform(-0.5, 0.5);
    for (int v = 0; v < M; ++v)
        for (int c = 0; c < 3; ++c) X.at(v, c) = m.vertices[v][c];
    proj = nn::Tensor(M, 3);
    for (auto& v : proj.v) v = rng.uniform(-1, 1);

    auto build = [&](nn::Tape& t, int raw_id, int x_id) {
        FieldNodes f = field_heads(t, raw_id, rig.n_e, rig.n_j);
        int out = lbs_tape(t, x_id, f, rig, pose);
        return t.sum(t.mul(out, t.leaf(proj, false)));
    };

    nn::Tape t;
    int raw_id = t.leaf(raw, true);
    int x_id = t.leaf(X, true);
    int loss = build(t, raw_id, x_id);
    t.backward(loss);
    nn::Tensor g_raw = t.grad(raw_id), g_x = t.grad(x_id);

    auto eval = [&](const nn::Tensor& rw, const nn::Tensor& xx) {
        nn::Tape ft;
        return ft.val(build(ft, ft.leaf(rw, false), ft.leaf(xx, false))).at(0, 0);
    };
    double h = 1e-5;
    for (size_t e = 0; e < raw.v.size(); e += 7) {
        nn::Tensor rp = raw, rm = raw;
        rp.v[e] += h;
        rm.v[e] -= h;
        double fd = (eval(rp, X) - eval(rm, X)) / (2 * h);
        CHECK_THAT(g_raw.v[e], Catch::Matchers::WithinAbs(fd, 1e-5 * std::max(1.0, std::abs(fd))));
    }
    for (size_t e = 0; e < X.v.size(); e += 5) {
        nn::Tensor xp = X, xm = X;
        xp.v[e] += h;
        xm.v[e] -= h;
        double fd = (eval(raw, xp) - eval(raw, xm)) / (2 * h);
        CHECK_THAT(g_x.v[e], Catch::Matchers::WithinAbs(fd, 1e-5 * std::max(1.0, std::abs(fd))));
    }
}

TEST_CASE("lbs rejects malformed inputs") {
    DeformationRig rig = test_rig();
    PoseExpr pose = rest_pose(rig);
    BlendFields bad = rig.template_fields;
    bad.w_at(0)[0] += 0.5; // breaks normalization
    CHECK_THROWS(lbs_deform(rig.template_verts, bad, rig, pose));
    PoseExpr short_pose = pose;
    short_pose.theta.pop_back();
    CHECK_THROWS(lbs_deform(rig.template_verts, rig.template_fields, rig, short_pose));
    PoseExpr skew = pose;
    skew.theta[0].R(0, 1) = 0.2;
    CHECK_THROWS(lbs_deform(rig.template_verts, rig.template_fields, rig, skew));
}
