#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "af/core/rng.hpp"
#include "af/nn/adam.hpp"
#include "af/nn/checkpoint.hpp"
#include "af/nn/mlp.hpp"
#include "af/nn/tape.hpp"
#include "af/pbr/fglut.hpp"

using namespace af;
using nn::Tape;
using nn::Tensor;

namespace {

Tensor random_tensor(int n, int d, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(n, d);
    for (auto& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

// Central finite differences against reverse-mode gradients. The graph is a
// pure function of the leaves; the scalar is whatever `build` returns.
void check_gradients(std::vector<Tensor> inputs,
                     const std::function<int(Tape&, const std::vector<int>&)>& build,
                     double tol = 1e-6, double h = 1e-5) {
    Tape t;
    std::vector<int> ids;
    for (auto& in : inputs) ids.push_back(t.leaf(in, true));
    int loss = build(t, ids);
    REQUIRE(t.val(loss).n == 1);
    REQUIRE(t.val(loss).d == 1);
    t.backward(loss);
    std::vector<Tensor> analytic;
    for (int id : ids) analytic.push_back(t.grad(id));

    auto eval = [&](const std::vector<Tensor>& xs) {
        Tape ft;
        std::vector<int> fids;
        for (auto& in : xs) fids.push_back(ft.leaf(in, false));
        return ft.val(build(ft, fids)).at(0, 0);
    };

    for (size_t k = 0; k < inputs.size(); ++k)
        for (size_t e = 0; e < inputs[k].v.size(); ++e) {
            std::vector<Tensor> xs = inputs;
            double x0 = xs[k].v[e];
            xs[k].v[e] = x0 + h;
            double fp = eval(xs);
            xs[k].v[e] = x0 - h;
            double fm = eval(xs);
            double fd = (fp - fm) / (2 * h);
            double an = analytic[k].v[e];
            double scale = std::max({1.0, std::abs(fd), std::abs(an)});
            INFO("input " << k << " elem " << e << " fd=" << fd << " an=" << an);
            CHECK(std::abs(fd - an) <= tol * scale);
        }
}

// Project a tensor-valued head to a scalar with a fixed random matrix so
// asymmetric gradient bugs cannot cancel in the reduction.
int project(Tape& t, int node, uint64_t salt) {
    const Tensor& v = t.val(node);
    Rng rng(hash_combine(0xabcdef, salt));
    Tensor p(v.n, v.d);
    for (auto& x : p.v) x = rng.uniform(-1.0, 1.0);
    return t.sum(t.mul(node, t.leaf(p, false)));
}

} // namespace

TEST_CASE("elementwise and reduction op gradients match finite differences") {
    Rng rng(1234);
    auto unary = [&](const char* name, std::function<int(Tape&, int)> op, double lo, double hi,
                     double tol = 1e-6) {
        DYNAMIC_SECTION("op " << name) {
            Tensor a = random_tensor(3, 4, rng, lo, hi);
            check_gradients({a}, [&](Tape& t, const std::vector<int>& id) {
                return project(t, op(t, id[0]), 7);
            }, tol);
        }
    };
    unary("scale", [](Tape& t, int a) { return t.scale(a, -1.7); }, -1, 1);
    unary("add_c", [](Tape& t, int a) { return t.add_c(a, 0.37); }, -1, 1);
    unary("pow_c", [](Tape& t, int a) { return t.pow_c(a, 2.4); }, 0.2, 1.5);
    unary("max_c", [](Tape& t, int a) { return t.max_c(a, 0.0); }, 0.1, 1.0);
    unary("relu", [](Tape& t, int a) { return t.relu(a); }, 0.05, 1.0);
    unary("sigmoid", [](Tape& t, int a) { return t.sigmoid(a); }, -2, 2);
    unary("exp", [](Tape& t, int a) { return t.exp(a); }, -1, 1);
    unary("log_g", [](Tape& t, int a) { return t.log_g(a, 1e-4); }, 0.1, 2.0);
    unary("sqrt_g", [](Tape& t, int a) { return t.sqrt_g(a, 1e-12); }, 0.1, 2.0);
    unary("sin", [](Tape& t, int a) { return t.sin(a); }, -2, 2);
    unary("cos", [](Tape& t, int a) { return t.cos(a); }, -2, 2);
    unary("abs", [](Tape& t, int a) { return t.abs(a); }, 0.1, 1.0);
    unary("srgb_to_linear", [](Tape& t, int a) { return t.srgb_to_linear(a); }, 0.1, 1.0);
    unary("row_sum", [](Tape& t, int a) { return t.row_sum(a); }, -1, 1);
    unary("col_sum", [](Tape& t, int a) { return t.col_sum(a); }, -1, 1);
    unary("sum", [](Tape& t, int a) { return t.sum(a); }, -1, 1);
    unary("mean", [](Tape& t, int a) { return t.mean(a); }, -1, 1);
    unary("row_normalize", [](Tape& t, int a) { return t.row_normalize(a); }, 0.3, 1.0, 1e-5);
    unary("slice_cols", [](Tape& t, int a) { return t.slice_cols(a, 1, 3); }, -1, 1);
    unary("freq_enc", [](Tape& t, int a) { return t.freq_enc(a, 3); }, -1, 1, 1e-5);

    auto binary = [&](const char* name, std::function<int(Tape&, int, int)> op, int bn, int bd,
                      double lo, double hi, double tol = 1e-6) {
        DYNAMIC_SECTION("op " << name) {
            Tensor a = random_tensor(3, 4, rng, lo, hi);
            Tensor b = random_tensor(bn, bd, rng, lo, hi);
            check_gradients({a, b}, [&](Tape& t, const std::vector<int>& id) {
                return project(t, op(t, id[0], id[1]), 11);
            }, tol);
        }
    };
    binary("add", [](Tape& t, int a, int b) { return t.add(a, b); }, 3, 4, -1, 1);
    binary("sub", [](Tape& t, int a, int b) { return t.sub(a, b); }, 3, 4, -1, 1);
    binary("mul", [](Tape& t, int a, int b) { return t.mul(a, b); }, 3, 4, -1, 1);
    binary("divide", [](Tape& t, int a, int b) { return t.divide(a, b); }, 3, 4, 0.4, 1.5);
    binary("add_row", [](Tape& t, int a, int b) { return t.add_row(a, b); }, 1, 4, -1, 1);
    binary("row_scale", [](Tape& t, int a, int b) { return t.row_scale(a, b); }, 3, 1, -1, 1);
    binary("row_div", [](Tape& t, int a, int b) { return t.row_div(a, b); }, 3, 1, 0.4, 1.5);
    binary("row_dot", [](Tape& t, int a, int b) { return t.row_dot(a, b); }, 3, 4, -1, 1);
    binary("concat_cols", [](Tape& t, int a, int b) { return t.concat_cols(a, b); }, 3, 2, -1, 1);
    binary("matmul", [](Tape& t, int a, int b) { return t.matmul(a, b); }, 4, 5, -1, 1, 1e-5);

    DYNAMIC_SECTION("op cross3") {
        Tensor a = random_tensor(4, 3, rng);
        Tensor b = random_tensor(4, 3, rng);
        check_gradients({a, b}, [&](Tape& t, const std::vector<int>& id) {
            return project(t, t.cross3(id[0], id[1]), 13);
        });
    }
}

TEST_CASE("csr map gradients and values") {
    Rng rng(99);
    auto map = std::make_shared<nn::CsrMap>();
    map->begin();
    map->entry(0, 0.25);
    map->entry(2, 0.75);
    map->end_row();
    map->entry(1, 1.0);
    map->end_row();
    map->entry(3, -0.5);
    map->entry(0, 0.5);
    map->entry(2, 2.0);
    map->end_row();
    map->finish(4);

    Tensor a = random_tensor(4, 3, rng);
    Tape t;
    int id = t.leaf(a, false);
    int y = t.csr(std::shared_ptr<const nn::CsrMap>(map), id);
    const Tensor& v = t.val(y);
    REQUIRE(v.n == 3);
    for (int j = 0; j < 3; ++j) {
        CHECK_THAT(v.at(0, j), Catch::Matchers::WithinAbs(0.25 * a.at(0, j) + 0.75 * a.at(2, j), 1e-14));
        CHECK_THAT(v.at(1, j), Catch::Matchers::WithinAbs(a.at(1, j), 1e-14));
        CHECK_THAT(v.at(2, j),
                   Catch::Matchers::WithinAbs(-0.5 * a.at(3, j) + 0.5 * a.at(0, j) + 2.0 * a.at(2, j), 1e-14));
    }
    check_gradients({a}, [&](Tape& tt, const std::vector<int>& ids) {
        return project(tt, tt.csr(std::shared_ptr<const nn::CsrMap>(map), ids[0]), 17);
    });
}

TEST_CASE("fg_lookup gradients inside a texel") {
    nn::FgTable fg = bake_fg_lut(8, 8, 512);
    auto lut = std::make_shared<const nn::FgTable>(fg);
    // points chosen off texel-centre grid lines so central differences stay
    // within one bilinear cell
    Tensor r(3, 1), ct(3, 1);
    r.v = {0.23, 0.52, 0.81};
    ct.v = {0.33, 0.61, 0.72};
    check_gradients({r, ct}, [&](Tape& t, const std::vector<int>& id) {
        return project(t, t.fg_lookup(lut, id[0], id[1]), 19);
    }, 1e-5, 1e-6);
}

TEST_CASE("sh_ide gradients") {
    Rng rng(7);
    Tensor dir(3, 3), r(3, 1);
    for (int i = 0; i < 3; ++i) {
        Vec3 d = normalized(Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        dir.at(i, 0) = d.x;
        dir.at(i, 1) = d.y;
        dir.at(i, 2) = d.z;
        r.at(i, 0) = rng.uniform(0.1, 0.9);
    }
    check_gradients({dir, r}, [&](Tape& t, const std::vector<int>& id) {
        return project(t, t.sh_ide(id[0], id[1]), 23);
    }, 1e-5);
}

TEST_CASE("hash_grid gradients for both coordinates and table") {
    nn::HashGridSpec spec;
    spec.levels = 3;
    spec.feat = 2;
    spec.table_size = 64;
    spec.n_min = 2;
    spec.n_max = 7;
    auto payload = std::make_shared<nn::HashGridPayload>();
    payload->spec = spec;
    payload->res = spec.resolutions();
    Rng rng(31);
    Tensor params(spec.param_rows(), spec.feat);
    for (auto& v : params.v) v = rng.uniform(-0.5, 0.5);
    Tensor x(4, 3);
    // interior points away from any cell boundary at resolutions <= 7
    double pts[12] = {0.131, 0.617, 0.373, 0.559, 0.213, 0.808, 0.444, 0.101, 0.667, 0.090, 0.911, 0.302};
    std::copy(pts, pts + 12, x.v.begin());
    check_gradients({params, x}, [&](Tape& t, const std::vector<int>& id) {
        return project(t, t.hash_grid(payload, id[0], id[1]), 29);
    }, 1e-5);
}

TEST_CASE("tape arena reuse returns identical ids and values after reset") {
    Rng rng(5);
    Tensor a = random_tensor(4, 4, rng);
    Tensor w = random_tensor(4, 2, rng);
    Tape t;
    auto build = [&]() {
        int ia = t.leaf(a, true);
        int iw = t.leaf(w, true);
        return t.mean(t.sigmoid(t.matmul(ia, iw)));
    };
    int l1 = build();
    double v1 = t.val(l1).at(0, 0);
    t.backward(l1);
    double g1 = t.grad(1).at(0, 0);
    for (int rep = 0; rep < 3; ++rep) {
        t.reset();
        int l2 = build();
        CHECK(l2 == l1);
        CHECK(t.val(l2).at(0, 0) == v1);
        t.backward(l2);
        CHECK(t.grad(1).at(0, 0) == g1);
    }
}

TEST_CASE("needs-grad pruning keeps constant subgraphs out of backward") {
    Tape t;
    Tensor c = Tensor::full(2, 2, 3.0);
    int frozen = t.leaf(c, false);
    int live = t.leaf(c, true);
    int mixed = t.add(t.mul(frozen, frozen), live);
    int loss = t.sum(mixed);
    t.backward(loss);
    CHECK(t.grad(live).at(0, 0) == 1.0);
    // the frozen leaf never gets a gradient buffer
    CHECK(t.grad(frozen).count() == 0);
}

TEST_CASE("backward rejects non-scalar roots") {
    Tape t;
    int a = t.leaf(Tensor::full(2, 2, 1.0), true);
    CHECK_THROWS(t.backward(a));
}

TEST_CASE("check_finite names the offending node") {
    Tape t;
    Tensor bad(1, 1);
    bad.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    int a = t.leaf(bad, false);
    CHECK_THROWS_WITH(t.check_finite(a, "material.layer0"),
                      Catch::Matchers::ContainsSubstring("material.layer0"));
}

TEST_CASE("mlp opens at its neutral output") {
    nn::Mlp m;
    m.spec.in = 3;
    m.spec.hidden = {16, 16};
    m.spec.out = 4;
    m.spec.out_act = nn::OutAct::Sigmoid;
    m.init(42);
    Rng rng(17);
    Tensor x = random_tensor(5, 3, rng);
    Tensor y = m.infer(x);
    for (double v : y.v) CHECK_THAT(v, Catch::Matchers::WithinAbs(0.5, 1e-15));

    m.spec.out_act = nn::OutAct::None;
    m.init(43);
    y = m.infer(x);
    for (double v : y.v) CHECK(v == 0.0);
}

TEST_CASE("mlp gradients match finite differences across encodings") {
    Rng rng(11);
    auto run = [&](nn::Encoding enc) {
        nn::Mlp m;
        m.spec.in = 3;
        m.spec.hidden = {8};
        m.spec.out = 2;
        m.spec.enc = enc;
        m.spec.freq_octaves = 2;
        m.spec.out_act = nn::OutAct::Sigmoid;
        if (enc == nn::Encoding::HashGrid) {
            m.spec.grid.levels = 2;
            m.spec.grid.feat = 2;
            m.spec.grid.table_size = 32;
            m.spec.grid.n_min = 2;
            m.spec.grid.n_max = 5;
        }
        if (enc == nn::Encoding::Ide) m.spec.in = kIdeFeatureLen;
        m.init(123);
        // give the zero-initialised last layer a nonzero value so its
        // gradient path is exercised with signal
        for (auto& v : m.weights[m.weights.size() - 2].v) v = rng.uniform(-0.3, 0.3);

        std::vector<Tensor> inputs;
        Tensor x = enc == nn::Encoding::HashGrid
                       ? random_tensor(3, 3, rng, 0.11, 0.87)
                       : random_tensor(3, m.spec.in, rng, -0.9, 0.9);
        if (enc == nn::Encoding::HashGrid) {
            double pts[9] = {0.131, 0.617, 0.373, 0.559, 0.213, 0.808, 0.444, 0.101, 0.667};
            std::copy(pts, pts + 9, x.v.begin());
        }
        inputs.push_back(x);
        for (nn::Tensor* p : m.params()) inputs.push_back(*p);

        check_gradients(inputs, [&](Tape& t, const std::vector<int>& ids) {
            nn::Mlp local = m;
            size_t k = 1;
            // rebind the copied net's parameters to the checker's leaves
            local.bind(t, true);
            local.leaf_ids.clear();
            for (; k < ids.size(); ++k) local.leaf_ids.push_back(ids[k]);
            return project(t, local.forward(t, ids[0], "fd"), 37);
        }, 2e-5);
    };
    SECTION("raw") { run(nn::Encoding::Raw); }
    SECTION("frequency") { run(nn::Encoding::Frequency); }
    SECTION("hash grid") { run(nn::Encoding::HashGrid); }
}

TEST_CASE("adam matches the reference update on a quadratic") {
    // single parameter, constant gradient g: after one step with bias
    // correction, the update is exactly -lr * g/(|g| + eps_hat) ~ -lr * sign(g)
    nn::Tensor p(1, 1);
    p.at(0, 0) = 1.0;
    std::vector<nn::Tensor*> params{&p};
    nn::Adam opt;
    opt.init(params);
    nn::Tensor g(1, 1);
    g.at(0, 0) = 0.5;
    std::vector<const nn::Tensor*> grads{&g};
    opt.step(params, grads, 1e-2);
    // m_hat = g, v_hat = g^2 -> step = lr * g / (sqrt(g^2) + eps)
    double expected = 1.0 - 1e-2 * 0.5 / (0.5 + opt.eps);
    CHECK_THAT(p.at(0, 0), Catch::Matchers::WithinAbs(expected, 1e-12));

    // a few hundred steps on f(x) = x^2/2 drive x to ~0
    for (int it = 0; it < 500; ++it) {
        g.at(0, 0) = p.at(0, 0);
        opt.step(params, grads, 1e-1);
    }
    CHECK(std::abs(p.at(0, 0)) < 1e-2);
}

TEST_CASE("checkpoint round trip is bit exact and self describing") {
    nn::Mlp m;
    m.spec.in = 3;
    m.spec.hidden = {8, 8};
    m.spec.out = 5;
    m.spec.out_act = nn::OutAct::Sigmoid;
    m.spec.enc = nn::Encoding::Frequency;
    m.spec.freq_octaves = 4;
    m.init(77);
    Rng rng(3);
    for (auto& w : m.weights)
        for (auto& v : w.v) v = rng.uniform(-1, 1);

    std::map<std::string, Tensor> t;
    nn::collect_mlp(t, m, "net.");
    nn::save_tensors("ckpt_test.flrw", t);
    auto loaded = nn::load_tensors("ckpt_test.flrw");
    nn::Mlp r = nn::load_mlp(loaded, "net.");
    REQUIRE(r.spec.in == m.spec.in);
    REQUIRE(r.spec.hidden == m.spec.hidden);
    REQUIRE(r.spec.out == m.spec.out);
    REQUIRE(r.spec.out_act == m.spec.out_act);
    REQUIRE(r.spec.enc == m.spec.enc);
    REQUIRE(r.spec.freq_octaves == m.spec.freq_octaves);
    REQUIRE(r.weights.size() == m.weights.size());
    for (size_t i = 0; i < m.weights.size(); ++i) CHECK(r.weights[i].v == m.weights[i].v);

    Tensor x = random_tensor(4, 3, rng);
    Tensor y0 = m.infer(x);
    Tensor y1 = r.infer(x);
    CHECK(y0.v == y1.v);
    std::remove("ckpt_test.flrw");
}

TEST_CASE("hash grid checkpoint restores the feature table") {
    nn::Mlp m;
    m.spec.in = 3;
    m.spec.hidden = {8};
    m.spec.out = 2;
    m.spec.enc = nn::Encoding::HashGrid;
    m.spec.grid.levels = 2;
    m.spec.grid.feat = 2;
    m.spec.grid.table_size = 32;
    m.spec.grid.n_min = 2;
    m.spec.grid.n_max = 5;
    m.init(9);
    std::map<std::string, Tensor> t;
    nn::collect_mlp(t, m, "g.");
    nn::save_tensors("ckpt_grid.flrw", t);
    nn::Mlp r = nn::load_mlp(nn::load_tensors("ckpt_grid.flrw"), "g.");
    REQUIRE(r.spec.enc == nn::Encoding::HashGrid);
    REQUIRE(r.spec.grid.levels == 2);
    REQUIRE(r.spec.grid.table_size == 32);
    CHECK(r.grid_params.v == m.grid_params.v);
    Rng rng(5);
    Tensor x = random_tensor(3, 3, rng, 0.1, 0.9);
    CHECK(m.infer(x).v == r.infer(x).v);
    std::remove("ckpt_grid.flrw");
}

TEST_CASE("rng streams are deterministic and splittable") {
    Rng a(hash_combine(42, 7));
    Rng b(hash_combine(42, 7));
    for (int i = 0; i < 100; ++i) CHECK(a.uniform(0, 1) == b.uniform(0, 1));
    Rng c(hash_combine(42, 8));
    bool all_same = true;
    Rng a2(hash_combine(42, 7));
    for (int i = 0; i < 16; ++i) all_same = all_same && (a2.uniform(0, 1) == c.uniform(0, 1));
    CHECK_FALSE(all_same);
}
