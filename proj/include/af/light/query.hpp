#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "af/light/envmap.hpp"
#include "af/light/ide.hpp"
#include "af/nn/mlp.hpp"
#include "af/nn/tape.hpp"
#include "af/pbr/prefilter.hpp"
#include "af/pbr/tonemap.hpp"

namespace af {

// Neural prefiltered-light query.  The network maps the encoded (direction,
// roughness) pair to log-sRGB values; decoding is linear = srgb^-1(exp(y)),
// so an all-zero head yields constant radiance 1.
inline Vec3 light_decode(Vec3 y) {
    return {srgb_to_linear(std::exp(y.x)), srgb_to_linear(std::exp(y.y)), srgb_to_linear(std::exp(y.z))};
}

inline Vec3 light_encode(Vec3 linear, double floor = 1e-6) {
    Vec3 y;
    for (int c = 0; c < 3; ++c) y[c] = std::log(std::max(linear_to_srgb(linear[c]), floor));
    return y;
}

inline Vec3 light_query_neural(nn::Mlp& net, Vec3 dir, double rough) {
    std::vector<double> feat = ide_encode(dir, rough);
    nn::Tensor x(1, kIdeFeatureLen);
    for (int j = 0; j < kIdeFeatureLen; ++j) x.at(0, j) = feat[j];
    nn::Tensor y = net.infer(x);
    return light_decode({y.at(0, 0), y.at(0, 1), y.at(0, 2)});
}

inline Vec3 light_query_lut(const PrefilteredEnv& pf, Vec3 dir, double rough) {
    return prefiltered_lookup(pf, dir, rough);
}

// Tape-side light source: given unit direction rows [n x 3] and roughness
// [n x 1], produce linear radiance [n x 3].
struct TapeLight {
    virtual ~TapeLight() = default;
    virtual int query(nn::Tape& t, int dir, int rough) = 0;
};

struct NeuralTapeLight : TapeLight {
    nn::Mlp* net = nullptr;

    explicit NeuralTapeLight(nn::Mlp* n) : net(n) {}

    int query(nn::Tape& t, int dir, int rough) override {
        int feat = t.sh_ide(dir, rough);
        int y = net->forward(t, feat, "light");
        return t.srgb_to_linear(t.exp(y));
    }
};

// Constant-free LUT light: values enter the tape as constants, so no gradient
// flows into the lighting (used for relighting and evaluation).
struct LutTapeLight : TapeLight {
    const PrefilteredEnv* pf = nullptr;

    explicit LutTapeLight(const PrefilteredEnv* p) : pf(p) {}

    int query(nn::Tape& t, int dir, int rough) override {
        const nn::Tensor& d = t.val(dir);
        const nn::Tensor& r = t.val(rough);
        nn::Tensor v(d.n, 3);
        for (int i = 0; i < d.n; ++i) {
            Vec3 c = prefiltered_lookup(*pf, {d.at(i, 0), d.at(i, 1), d.at(i, 2)}, r.at(i, 0));
            v.at(i, 0) = c.x;
            v.at(i, 1) = c.y;
            v.at(i, 2) = c.z;
        }
        return t.leaf(v, false);
    }
};

} // namespace af
