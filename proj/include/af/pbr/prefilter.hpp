#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "af/core/rng.hpp"
#include "af/core/thread.hpp"
#include "af/light/envmap.hpp"
#include "af/pbr/brdf.hpp"

namespace af {

inline constexpr int kPrefilterLevels = 6;
inline constexpr std::array<double, kPrefilterLevels> kPrefilterRoughness = {0.04, 0.2, 0.4, 0.6, 0.8, 1.0};

// Weight-normalized specular convolutions of an environment map, one
// equirect image per roughness level; the r = 1 level is the cosine
// convolution E(n)/pi.
struct PrefilteredEnv {
    std::vector<Image> levels;
    int width() const { return levels.empty() ? 0 : levels[0].w; }
    int height() const { return levels.empty() ? 0 : levels[0].h; }
};

namespace detail {

inline Vec3 prefilter_texel(const EnvMap& env, Vec3 n, double rough,
                            const std::vector<Vec2>& seq) {
    Vec3 acc{0, 0, 0};
    double wacc = 0.0;
    if (rough >= 1.0) {
        // Pure cosine convolution: cosine-importance samples with unit weights.
        for (const Vec2& u : seq) {
            Vec3 l = sample_cosine(n, u.x, u.y);
            acc += env_lookup(env, l);
            wacc += 1.0;
        }
    } else {
        double alpha = rough * rough;
        for (const Vec2& u : seq) {
            Vec3 h = sample_ggx_half(n, alpha, u.x, u.y);
            Vec3 l = 2.0 * dot(n, h) * h - n;
            double w = dot(n, l);
            if (w <= 0.0) continue;
            acc += w * env_lookup(env, l);
            wacc += w;
        }
    }
    if (wacc <= 0.0) return env_lookup(env, n);
    return acc / wacc;
}

} // namespace detail

inline PrefilteredEnv prefilter_env(const EnvMap& env, int samples = 512) {
    validate_env(env, "prefilter input");
    std::vector<Vec2> seq(samples);
    for (int s = 0; s < samples; ++s) seq[s] = hammersley(uint32_t(s), uint32_t(samples));
    PrefilteredEnv pf;
    pf.levels.resize(kPrefilterLevels);
    for (int lev = 0; lev < kPrefilterLevels; ++lev) {
        Image& im = pf.levels[lev];
        im = Image(env.width(), env.height(), 3);
        double rough = kPrefilterRoughness[lev];
        parallel_for(env.height(), 1, [&](int64_t y0, int64_t y1) {
            for (int64_t y = y0; y < y1; ++y) {
                for (int x = 0; x < env.width(); ++x) {
                    Vec3 n = env_texel_dir(env, x, int(y));
                    Vec3 v = detail::prefilter_texel(env, n, rough, seq);
                    for (int c = 0; c < 3; ++c) im.at(x, int(y), c) = float(v[c]);
                }
            }
        });
    }
    return pf;
}

// Bilinear in direction, linear between bracketing roughness levels.
inline Vec3 prefiltered_lookup(const PrefilteredEnv& pf, Vec3 dir, double rough) {
    double r = std::clamp(rough, kPrefilterRoughness.front(), kPrefilterRoughness.back());
    int lo = 0;
    while (lo < kPrefilterLevels - 2 && kPrefilterRoughness[lo + 1] <= r) ++lo;
    int hi = lo + 1;
    double t = (r - kPrefilterRoughness[lo]) / (kPrefilterRoughness[hi] - kPrefilterRoughness[lo]);
    t = std::clamp(t, 0.0, 1.0);
    Vec3 va = env_lookup_image(pf.levels[lo], dir);
    Vec3 vb = env_lookup_image(pf.levels[hi], dir);
    return (1.0 - t) * va + t * vb;
}

inline std::string prefilter_level_path(const std::string& dir, int level) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "mip_%d_r%.2f.pfm", level, kPrefilterRoughness[level]);
    return dir + "/" + buf;
}

inline void save_prefiltered(const std::string& dir, const PrefilteredEnv& pf) {
    for (int lev = 0; lev < kPrefilterLevels; ++lev)
        write_pfm(prefilter_level_path(dir, lev), pf.levels[lev]);
}

inline PrefilteredEnv load_prefiltered(const std::string& dir) {
    PrefilteredEnv pf;
    pf.levels.resize(kPrefilterLevels);
    for (int lev = 0; lev < kPrefilterLevels; ++lev) {
        pf.levels[lev] = read_pfm(prefilter_level_path(dir, lev));
        if (pf.levels[lev].c != 3) throw std::runtime_error("load_prefiltered: level " + std::to_string(lev) + " is not RGB");
        if (lev > 0 && (pf.levels[lev].w != pf.levels[0].w || pf.levels[lev].h != pf.levels[0].h))
            throw std::runtime_error("load_prefiltered: level size mismatch");
    }
    return pf;
}

} // namespace af
