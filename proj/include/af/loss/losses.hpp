#pragma once

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "af/core/image.hpp"
#include "af/core/rng.hpp"
#include "af/mesh/trimesh.hpp"
#include "af/nn/mlp.hpp"
#include "af/nn/robust.hpp"
#include "af/nn/tape.hpp"
#include "af/pbr/shade.hpp"

namespace af {

struct LossWeights {
    double rgb = 1.0;
    double pyramid = 0.1;
    double mask = 2.0;
    double flame = 5.0;
    double laplacian = 60.0;
    double normal = 0.1;
    double smooth = 0.01;
    double rough_reg = 0.01;
    double spec_reg = 0.01;
    double light_white = 0.01;
    double inner_e = 50.0, inner_p = 50.0, inner_w = 2.5;
    double mu_rough = 0.5, sigma_rough = 0.1;
    double mu_spec = 0.3753, sigma_spec = 0.1655;
    double log_eps = 1e-4;
    double smooth_sigma = 0.01; // in normalized canonical units
    double barron_alpha = 1.0, barron_c = 0.01;

    void validate() const {
        const double all[] = {rgb, pyramid, mask, flame, laplacian, normal, smooth,
                              rough_reg, spec_reg, light_white, inner_e, inner_p, inner_w};
        for (double w : all)
            if (!(w >= 0.0)) throw std::runtime_error("loss weights must be >= 0");
        if (!(sigma_rough > 0.0) || !(sigma_spec > 0.0)) throw std::runtime_error("loss sigma must be > 0");
    }
};

// Accumulates weighted terms on the tape and keeps names for reporting.
struct LossAccumulator {
    nn::Tape* tape = nullptr;
    std::vector<std::pair<std::string, int>> terms; // unweighted nodes
    std::vector<double> weights;
    int total = -1;

    explicit LossAccumulator(nn::Tape* t) : tape(t) {}

    void add(const std::string& name, int node, double weight) {
        terms.emplace_back(name, node);
        weights.push_back(weight);
        int w = tape->scale(node, weight);
        total = total < 0 ? w : tape->add(total, w);
    }
};

struct LossReport {
    long iteration = 0;
    std::vector<std::pair<std::string, double>> terms;
    double total = 0.0;

    static LossReport from(const LossAccumulator& acc, long iter) {
        LossReport r;
        r.iteration = iter;
        for (const auto& [name, node] : acc.terms) r.terms.emplace_back(name, acc.tape->val(node).at(0, 0));
        r.total = acc.total >= 0 ? acc.tape->val(acc.total).at(0, 0) : 0.0;
        return r;
    }

    void csv_header(FILE* f) const {
        std::fprintf(f, "iteration");
        for (const auto& [name, v] : terms) std::fprintf(f, ",%s", name.c_str());
        std::fprintf(f, ",total\n");
    }
    void csv_row(FILE* f) const {
        std::fprintf(f, "%ld", iteration);
        for (const auto& [name, v] : terms) std::fprintf(f, ",%.10g", v);
        std::fprintf(f, ",%.10g\n", total);
    }
};

// --- photometric terms ------------------------------------------------------

// Mean over masked rows of the squared log-space residual; mask is {0,1}
// per row.  Returns a constant 0 node (with a warning) when the mask is empty.
inline int loss_rgb_log(nn::Tape& t, int pred, int gt, int mask, double eps = 1e-4) {
    const nn::Tensor& m = t.val(mask);
    double count = 0.0;
    for (int i = 0; i < m.n; ++i) count += m.at(i, 0);
    if (count <= 0.0) {
        std::fprintf(stderr, "loss_rgb_log: empty mask, returning 0\n");
        return t.leaf_full(1, 1, 0.0, false);
    }
    int d = t.sub(t.log_g(pred, eps), t.log_g(gt, eps));
    int per_row = t.row_sum(t.mul(d, d));
    return t.scale(t.sum(t.mul(per_row, mask)), 1.0 / count);
}

// Plain-value mask MSE; constant under frozen coverage, reported not optimized.
inline double loss_mask_value(const Image& a, const Image& b) {
    if (a.w != b.w || a.h != b.h || a.c != 1 || b.c != 1)
        throw std::runtime_error("loss_mask: expected matching single-channel masks");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
    }
    return acc / double(a.data.size());
}

// Downsample chain for the pyramid loss: each map takes [h*w x c] rows to the
// half-resolution grid with a clamped 5-tap Gaussian ([1,4,6,4,1]/16).
struct PyramidMaps {
    std::vector<std::shared_ptr<const nn::CsrMap>> down;
    std::vector<std::pair<int, int>> sizes; // (w, h) per level, sizes[0] = input
};

inline PyramidMaps make_pyramid_maps(int w, int h, int levels = 4) {
    PyramidMaps pm;
    pm.sizes.emplace_back(w, h);
    const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    for (int lev = 1; lev < levels; ++lev) {
        int w2 = std::max(1, w / 2), h2 = std::max(1, h / 2);
        auto map = std::make_shared<nn::CsrMap>();
        map->begin();
        for (int Y = 0; Y < h2; ++Y) {
            for (int X = 0; X < w2; ++X) {
                for (int dy = -2; dy <= 2; ++dy) {
                    int sy = std::clamp(2 * Y + dy, 0, h - 1);
                    for (int dx = -2; dx <= 2; ++dx) {
                        int sx = std::clamp(2 * X + dx, 0, w - 1);
                        map->entry(sy * w + sx, k[dy + 2] * k[dx + 2]);
                    }
                }
                map->end_row();
            }
        }
        map->finish(w * h);
        pm.down.push_back(map);
        pm.sizes.emplace_back(w2, h2);
        w = w2;
        h = h2;
    }
    return pm;
}

// Average MSE over the pyramid levels (level 0 = the input images).
inline int loss_pyramid(nn::Tape& t, int pred_full, int gt_full, const PyramidMaps& maps) {
    int p = pred_full, g = gt_full;
    int acc = -1;
    int levels = int(maps.down.size()) + 1;
    for (int lev = 0; lev < levels; ++lev) {
        if (lev > 0) {
            p = t.csr(maps.down[lev - 1], p);
            g = t.csr(maps.down[lev - 1], g);
        }
        int d = t.sub(p, g);
        int mse = t.mean(t.mul(d, d));
        acc = acc < 0 ? mse : t.add(acc, mse);
    }
    return t.scale(acc, 1.0 / levels);
}

// --- geometric terms --------------------------------------------------------

// delta is the uniform-Laplacian node [M x 3]; loss = (1/M) sum ||delta||^2.
inline int loss_laplacian(nn::Tape& t, int delta) {
    int m = t.val(delta).n;
    return t.scale(t.sum(t.mul(delta, delta)), 1.0 / m);
}

// Gather maps for on-tape face normals and adjacent-face pairs.
struct NormalMaps {
    std::shared_ptr<const nn::CsrMap> corner[3]; // [F x M] vertex gathers
    std::shared_ptr<const nn::CsrMap> pair_a, pair_b; // [pairs x F]
    int faces = 0, pairs = 0;
};

inline std::shared_ptr<const nn::CsrMap> gather_map(const std::vector<int>& idx, int cols) {
    auto m = std::make_shared<nn::CsrMap>();
    m->begin();
    for (int i : idx) {
        m->entry(i, 1.0);
        m->end_row();
    }
    m->finish(cols);
    return m;
}

inline NormalMaps make_normal_maps(const TriMesh& mesh, const MeshAdjacency& adj) {
    NormalMaps nm;
    int M = int(mesh.vertices.size());
    nm.faces = int(mesh.faces.size());
    nm.pairs = int(adj.face_pairs.size());
    for (int c = 0; c < 3; ++c) {
        std::vector<int> idx(nm.faces);
        for (int f = 0; f < nm.faces; ++f) idx[f] = mesh.faces[f][c];
        nm.corner[c] = gather_map(idx, M);
    }
    std::vector<int> ia(nm.pairs), ib(nm.pairs);
    for (int p = 0; p < nm.pairs; ++p) {
        ia[p] = adj.face_pairs[p].first;
        ib[p] = adj.face_pairs[p].second;
    }
    nm.pair_a = gather_map(ia, nm.faces);
    nm.pair_b = gather_map(ib, nm.faces);
    return nm;
}

// Unit face normals from positions node x [M x 3].
inline int face_normals_tape(nn::Tape& t, int x, const NormalMaps& nm) {
    int c0 = t.csr(nm.corner[0], x);
    int c1 = t.csr(nm.corner[1], x);
    int c2 = t.csr(nm.corner[2], x);
    return t.row_normalize(t.cross3(t.sub(c1, c0), t.sub(c2, c0)));
}

// (1/pairs) sum (1 - n_i . n_j)^2 over adjacent face pairs.
inline int loss_normal_consistency(nn::Tape& t, int x, const NormalMaps& nm) {
    int fn = face_normals_tape(t, x, nm);
    int na = t.csr(nm.pair_a, fn);
    int nb = t.csr(nm.pair_b, fn);
    int d = t.add_c(t.scale(t.row_dot(na, nb), -1.0), 1.0);
    return t.mean(t.mul(d, d));
}

// --- field and material regularizers ----------------------------------------

// (1/M) sum_v (ie*||dE|| + ip*||dP|| + iw*||dW||), whole-row unsquared norms.
inline int loss_flame_reg(nn::Tape& t, int E, int P, int W, const BlendFields& pseudo,
                          double inner_e = 50.0, double inner_p = 50.0, double inner_w = 2.5) {
    int M = pseudo.count;
    nn::Tensor Ec(M, pseudo.n_e * 3), Pc(M, pseudo.n_j * 27), Wc(M, pseudo.n_j);
    std::copy(pseudo.E.begin(), pseudo.E.end(), Ec.v.begin());
    std::copy(pseudo.P.begin(), pseudo.P.end(), Pc.v.begin());
    std::copy(pseudo.W.begin(), pseudo.W.end(), Wc.v.begin());
    auto norm_rows = [&](int node, const nn::Tensor& ref) {
        int d = t.sub(node, t.leaf(ref, false));
        return t.sqrt_g(t.row_sum(t.mul(d, d)), 0.0);
    };
    int ne = norm_rows(E, Ec);
    int np = norm_rows(P, Pc);
    int nw = norm_rows(W, Wc);
    int per_v = t.add(t.add(t.scale(ne, inner_e), t.scale(np, inner_p)), t.scale(nw, inner_w));
    return t.mean(per_v);
}

// (1/3) sum_i |cbar_i - mean(cbar)| over channel means of the diffuse light.
inline int loss_light_white(nn::Tape& t, int light_d) {
    int n = t.val(light_d).n;
    int cbar = t.scale(t.col_sum(light_d), 1.0 / n);
    int m3 = t.matmul(t.mean(cbar), t.leaf(nn::Tensor::full(1, 3, 1.0), false));
    return t.mean(t.abs(t.sub(cbar, m3)));
}

// Mean absolute z-score of samples x [n x 1].
inline int loss_stat_reg(nn::Tape& t, int x, double mu, double sigma) {
    return t.scale(t.mean(t.abs(t.add_c(x, -mu))), 1.0 / sigma);
}

// Robust penalty on albedo/roughness changes under a seeded Gaussian
// canonical-space displacement; x_cn holds normalized canonical coordinates.
inline int loss_smooth(nn::Tape& t, const nn::Mlp& material_net, int x_cn,
                       double displacement_sigma, uint64_t seed,
                       double alpha = 1.0, double c = 0.01) {
    const nn::Tensor& x = t.val(x_cn);
    nn::Tensor noise(x.n, x.d);
    Rng rng(hash_combine(seed, 0x530071));
    for (auto& v : noise.v) v = displacement_sigma * rng.gaussian();
    int x2 = t.add(x_cn, t.leaf(noise, false));
    MaterialNodes m1 = material_heads(t, material_net.forward(t, x_cn, "smooth_a"));
    MaterialNodes m2 = material_heads(t, material_net.forward(t, x2, "smooth_b"));
    int drho = t.row_sum(t.abs(t.sub(m1.rho, m2.rho)));
    int drough = t.row_sum(t.abs(t.sub(m1.rough, m2.rough)));
    int b1 = nn::barron_robust_node(t, drho, alpha, c);
    int b2 = nn::barron_robust_node(t, drough, alpha, c);
    return t.add(t.mean(b1), t.mean(b2));
}

} // namespace af
