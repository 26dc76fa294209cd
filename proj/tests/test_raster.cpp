#include <catch_amalgamated.hpp>

#include "af/mesh/trimesh.hpp"
#include "af/raster/raster.hpp"

using namespace af;

namespace {

// camera at -5z looking at the origin; +z forward
PinholeCamera front_cam(int w = 32, int h = 32) {
    return make_lookat({0, 0, -5}, {0, 0, 0}, {0, 1, 0}, 30.0, w, h);
}

struct Quad {
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
};

// axis-aligned quad at depth z spanning [-s, s]^2, facing the -z camera
Quad make_quad(double z, double s) {
    Quad q;
    q.verts = {{-s, -s, z}, {s, -s, z}, {s, s, z}, {-s, s, z}};
    q.faces = {{0, 2, 1}, {0, 3, 2}};
    return q;
}

std::vector<Vec3> flat_normals(size_t n) { return std::vector<Vec3>(n, Vec3{0, 0, -1}); }

} // namespace

TEST_CASE("large quad covers every pixel when it fills the frustum") {
    PinholeCamera cam = front_cam();
    Quad q = make_quad(0.0, 5.0);
    GBuffer gb = rasterize(cam, q.verts, q.verts, flat_normals(4), q.faces);
    CHECK(gb.covered() == cam.width * cam.height);
    for (int p = 0; p < cam.width * cam.height; ++p) {
        CHECK(gb.mask[p] == 1);
        CHECK(gb.face[p] >= 0);
    }
}

TEST_CASE("mask marks exactly the pixels with a face") {
    PinholeCamera cam = front_cam();
    Quad q = make_quad(0.0, 0.8);
    GBuffer gb = rasterize(cam, q.verts, q.verts, flat_normals(4), q.faces);
    int inside = 0;
    for (int p = 0; p < cam.width * cam.height; ++p) {
        CHECK((gb.mask[p] == 1) == (gb.face[p] >= 0));
        inside += gb.mask[p];
    }
    CHECK(inside > 0);
    CHECK(inside < cam.width * cam.height);
    CHECK(int(gb.pixels.size()) == inside);
}

TEST_CASE("nearer geometry wins the depth test") {
    PinholeCamera cam = front_cam();
    Quad far_q = make_quad(1.0, 5.0);
    Quad near_q = make_quad(-1.0, 0.4);
    std::vector<Vec3> verts = far_q.verts;
    std::vector<std::array<int, 3>> faces = far_q.faces;
    for (auto& v : near_q.verts) verts.push_back(v);
    for (auto f : near_q.faces) {
        for (auto& i : f) i += 4;
        faces.push_back(f);
    }
    GBuffer gb = rasterize(cam, verts, verts, flat_normals(8), faces);
    int center = (cam.height / 2) * cam.width + cam.width / 2;
    REQUIRE(gb.face[center] >= 2); // one of the near faces
    CHECK(gb.depth[center] < 4.5);
    int corner = 0; // top-left pixel: only the far quad
    REQUIRE(gb.face[corner] >= 0);
    CHECK(gb.face[corner] < 2);
}

TEST_CASE("backfacing and behind-camera geometry is skipped") {
    PinholeCamera cam = front_cam();
    Quad q = make_quad(0.0, 5.0);
    std::swap(q.faces[0][1], q.faces[0][2]); // flip winding of one face
    std::swap(q.faces[1][1], q.faces[1][2]);
    GBuffer gb = rasterize(cam, q.verts, q.verts, flat_normals(4), q.faces);
    CHECK(gb.covered() == 0);

    Quad behind = make_quad(-10.0, 5.0); // behind the eye at z=-5
    GBuffer gb2 = rasterize(cam, behind.verts, behind.verts, flat_normals(4), behind.faces);
    CHECK(gb2.covered() == 0);
}

TEST_CASE("attribute interpolation is perspective correct") {
    // slanted triangle: linear-in-screen interpolation would be wrong; the
    // canonical attribute must reproduce the exact intersection point
    PinholeCamera cam = front_cam(64, 64);
    std::vector<Vec3> verts = {{-2, -2, -1.0}, {2, -2, 1.5}, {0, 2.5, 0.5}};
    std::vector<std::array<int, 3>> faces = {{0, 2, 1}};
    GBuffer gb = rasterize(cam, verts, verts, flat_normals(3), faces);
    REQUIRE(gb.covered() > 50);
    Vec3 eye = cam.eye();
    for (int k = 0; k < gb.covered(); k += 7) {
        int p = gb.pixels[k];
        // xd must lie on the triangle plane
        Vec3 n = normalized(cross(verts[2] - verts[0], verts[1] - verts[0]));
        double plane_err = std::abs(dot(gb.xd[p] - verts[0], n));
        CHECK(plane_err < 1e-9);
        // and on the ray through the pixel center
        int px = p % cam.width, py = p / cam.width;
        double u, v, depth;
        REQUIRE(cam.project(gb.xd[p], u, v, depth));
        CHECK_THAT(u, Catch::Matchers::WithinAbs(px + 0.5, 1e-6));
        CHECK_THAT(v, Catch::Matchers::WithinAbs(py + 0.5, 1e-6));
        CHECK(depth > 0);
        (void)eye;
    }
}

TEST_CASE("barycentrics are convex and consistent with stored attributes") {
    PinholeCamera cam = front_cam(48, 48);
    TriMesh m = make_icosphere(2);
    auto n = vertex_normals(m);
    GBuffer gb = rasterize(cam, m.vertices, m.vertices, n, m.faces);
    REQUIRE(gb.covered() > 0);
    for (int k = 0; k < gb.covered(); ++k) {
        int p = gb.pixels[k];
        const double* b = &gb.bary[size_t(p) * 3];
        CHECK(b[0] >= -1e-12);
        CHECK(b[1] >= -1e-12);
        CHECK(b[2] >= -1e-12);
        CHECK_THAT(b[0] + b[1] + b[2], Catch::Matchers::WithinAbs(1.0, 1e-9));
        const auto& f = m.faces[gb.face[p]];
        Vec3 xd = b[0] * m.vertices[f[0]] + b[1] * m.vertices[f[1]] + b[2] * m.vertices[f[2]];
        CHECK_THAT(length(xd - gb.xd[p]), Catch::Matchers::WithinAbs(0.0, 1e-9));
        Vec3 nd = b[0] * n[f[0]] + b[1] * n[f[1]] + b[2] * n[f[2]];
        CHECK_THAT(length(nd - gb.nd[p]), Catch::Matchers::WithinAbs(0.0, 1e-9));
    }
}

TEST_CASE("interp csr reproduces the g-buffer attributes exactly") {
    PinholeCamera cam = front_cam(40, 40);
    TriMesh m = make_icosphere(2);
    auto nrm = vertex_normals(m);
    GBuffer gb = rasterize(cam, m.vertices, m.vertices, nrm, m.faces);
    auto map = build_interp_csr(gb, m.vertices.size(), m.faces);
    REQUIRE(map->out_rows == gb.covered());
    REQUIRE(map->in_rows == m.vertex_count());

    nn::Tensor attr(m.vertex_count(), 3);
    for (int i = 0; i < m.vertex_count(); ++i)
        for (int c = 0; c < 3; ++c) attr.at(i, c) = m.vertices[i][c];
    nn::Tape t;
    int px = t.csr(std::shared_ptr<const nn::CsrMap>(map), t.leaf(attr, false));
    const nn::Tensor& v = t.val(px);
    for (int k = 0; k < gb.covered(); ++k) {
        Vec3 got{v.at(k, 0), v.at(k, 1), v.at(k, 2)};
        CHECK_THAT(length(got - gb.xd[gb.pixels[k]]), Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
}

TEST_CASE("frozen-coverage raster gradients: csr pullback matches finite differences") {
    PinholeCamera cam = front_cam(24, 24);
    TriMesh m = make_icosphere(1);
    auto nrm = vertex_normals(m);
    GBuffer gb = rasterize(cam, m.vertices, m.vertices, nrm, m.faces);
    auto map = build_interp_csr(gb, m.vertices.size(), m.faces);
    Rng rng(3);
    nn::Tensor attr(m.vertex_count(), 2), proj(gb.covered(), 2);
    for (auto& x : attr.v) x = rng.uniform(-1, 1);
    for (auto& x : proj.v) x = rng.uniform(-1, 1);

    auto run = [&](const nn::Tensor& a, bool grad, nn::Tensor* g) {
        nn::Tape t;
        int ia = t.leaf(a, grad);
        int loss = t.sum(t.mul(t.csr(std::shared_ptr<const nn::CsrMap>(map), ia), t.leaf(proj, false)));
        double v = t.val(loss).at(0, 0);
        if (grad) {
            t.backward(loss);
            *g = t.grad(ia);
        }
        return v;
    };
    nn::Tensor g;
    run(attr, true, &g);
    double h = 1e-6;
    for (size_t e = 0; e < attr.v.size(); e += 3) {
        nn::Tensor ap = attr, am = attr;
        ap.v[e] += h;
        am.v[e] -= h;
        double fd = (run(ap, false, nullptr) - run(am, false, nullptr)) / (2 * h);
        CHECK_THAT(g.v[e], Catch::Matchers::WithinAbs(fd, 1e-6 * std::max(1.0, std::abs(fd))));
    }
}

TEST_CASE("topology stamp tracks connectivity changes") {
    TriMesh m = make_icosphere(1);
    uint64_t s0 = topology_stamp(m.vertices.size(), m.faces);
    uint64_t s1 = topology_stamp(m.vertices.size(), m.faces);
    CHECK(s0 == s1);
    auto f2 = m.faces;
    std::swap(f2[0][0], f2[0][1]);
    CHECK(topology_stamp(m.vertices.size(), f2) != s0);
    CHECK(topology_stamp(m.vertices.size() + 1, m.faces) != s0);
}

TEST_CASE("rasterization is deterministic") {
    PinholeCamera cam = front_cam(33, 29);
    TriMesh m = make_icosphere(2);
    auto nrm = vertex_normals(m);
    GBuffer a = rasterize(cam, m.vertices, m.vertices, nrm, m.faces);
    GBuffer b = rasterize(cam, m.vertices, m.vertices, nrm, m.faces);
    CHECK(a.face == b.face);
    CHECK(a.bary == b.bary);
    CHECK(a.pixels == b.pixels);
}
