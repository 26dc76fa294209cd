#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>

#include "af/core/rng.hpp"
#include "af/light/ide.hpp"
#include "af/light/query.hpp"
#include "af/nn/adam.hpp"
#include "af/nn/mlp.hpp"
#include "af/nn/tape.hpp"
#include "af/pbr/brdf.hpp"
#include "af/pbr/prefilter.hpp"

namespace af {

inline nn::Mlp make_light_net(uint64_t seed, int hidden = 64, int layers = 2) {
    nn::Mlp net;
    net.spec.in = kIdeFeatureLen;
    net.spec.hidden.assign(size_t(layers), hidden);
    net.spec.out = 3;
    net.spec.enc = nn::Encoding::Ide;
    net.init(seed);
    return net;
}

namespace detail {

// (dir, roughness, encoded target) batch against the prefiltered stack.
inline void light_batch(const PrefilteredEnv& pf, Rng& rng, int rows,
                        nn::Tensor& dirs, nn::Tensor& rough, nn::Tensor& target) {
    dirs.resize(rows, 3);
    rough.resize(rows, 1);
    target.resize(rows, 3);
    for (int i = 0; i < rows; ++i) {
        Vec3 d = rng.unit_sphere();
        double r = rng.uniform(kRoughnessMin, 1.0);
        Vec3 y = light_encode(prefiltered_lookup(pf, d, r));
        dirs.at(i, 0) = d.x;
        dirs.at(i, 1) = d.y;
        dirs.at(i, 2) = d.z;
        rough.at(i, 0) = r;
        target.at(i, 0) = y.x;
        target.at(i, 1) = y.y;
        target.at(i, 2) = y.z;
    }
}

} // namespace detail

// MSE fit in the encoded domain; Adam with a fixed deterministic batch stream.
inline void fit_light(nn::Mlp& net, const PrefilteredEnv& pf, int iters = 1500, int batch = 512,
                      double lr = 1e-3, uint64_t seed = 99, FILE* log = nullptr) {
    Rng rng(hash_combine(seed, 0x11647));
    nn::Tape t;
    nn::Tensor dirs, rough, target;
    nn::Adam opt;
    opt.init(net.params());
    for (int it = 0; it < iters; ++it) {
        detail::light_batch(pf, rng, batch, dirs, rough, target);
        t.reset();
        net.bind(t);
        int feat = t.sh_ide(t.leaf(dirs, false), t.leaf(rough, false));
        int y = net.forward(t, feat, "light");
        int d = t.sub(y, t.leaf(target, false));
        int loss = t.mean(t.mul(d, d));
        t.backward(loss);
        std::vector<const nn::Tensor*> grads;
        for (int id : net.leaf_ids) grads.push_back(&t.grad(id));
        opt.step(net.params(), grads, lr);
        if (log && (it % 100 == 0 || it + 1 == iters))
            std::fprintf(log, "fit_light iter %d mse %.6g\n", it, t.val(loss).at(0, 0));
    }
}

// Relative L2 in linear radiance over held-out (dir, roughness) pairs.
inline double eval_light_rel_l2(nn::Mlp& net, const PrefilteredEnv& pf, int pairs = 10000,
                                uint64_t seed = 991) {
    Rng rng(hash_combine(seed, 0x377e1d));
    double num = 0.0, den = 0.0;
    nn::Tensor dirs(pairs, 3), rough(pairs, 1), target(pairs, 3);
    detail::light_batch(pf, rng, pairs, dirs, rough, target);
    nn::Tape t;
    net.bind(t);
    int feat = t.sh_ide(t.leaf(dirs, false), t.leaf(rough, false));
    int lin = t.srgb_to_linear(t.exp(net.forward(t, feat, "light")));
    const nn::Tensor& P = t.val(lin);
    for (int i = 0; i < pairs; ++i) {
        Vec3 gt = light_decode({target.at(i, 0), target.at(i, 1), target.at(i, 2)});
        Vec3 pr{P.at(i, 0), P.at(i, 1), P.at(i, 2)};
        Vec3 d = pr - gt;
        num += dot(d, d);
        den += dot(gt, gt);
    }
    return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

} // namespace af
