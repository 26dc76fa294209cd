#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "af/core/rng.hpp"
#include "af/core/thread.hpp"
#include "af/light/envmap.hpp"
#include "af/pbr/brdf.hpp"
#include "af/raster/raster.hpp"

namespace af {

// Region of a covered pixel: label of the corner with the largest barycentric
// weight (ties pick the lowest corner slot).
inline int pixel_region(const GBuffer& gb, const std::vector<std::array<int, 3>>& faces,
                        const std::vector<int>& labels, int pixel) {
    int f = gb.face[pixel];
    if (f < 0) return kRegionOther;
    const double* b = &gb.bary[size_t(pixel) * 3];
    int best = 0;
    if (b[1] > b[best]) best = 1;
    if (b[2] > b[best]) best = 2;
    int v = faces[f][best];
    return labels.empty() ? kRegionOther : labels[v];
}

// Direct-light Monte Carlo estimate of the shading integral: cosine sampling
// for the diffuse lobe, GGX half-vector sampling for the specular lobe.
inline Vec3 reference_shade(Vec3 n, Vec3 v, const MaterialSample& m, double f0,
                            const EnvMap& env, int spp, uint64_t seed) {
    double nv = dot(n, v);
    if (nv <= 0.0) return {0, 0, 0};
    double rough = std::clamp(m.rough, kRoughnessMin, 1.0);
    double alpha = rough * rough;
    Rng rng(seed);
    Vec3 dacc{0, 0, 0};
    for (int s = 0; s < spp; ++s) {
        Vec3 l = sample_cosine(n, rng.uniform(), rng.uniform());
        dacc += env_lookup(env, l);
    }
    Vec3 diffuse = m.rho * (dacc / double(spp));
    Vec3 sacc{0, 0, 0};
    for (int s = 0; s < spp; ++s) {
        Vec3 h = sample_ggx_half(n, alpha, rng.uniform(), rng.uniform());
        Vec3 l = 2.0 * dot(v, h) * h - v;
        double nl = dot(n, l);
        double vh = dot(v, h);
        double nh = dot(n, h);
        if (nl <= 0.0 || vh <= 0.0 || nh <= 0.0) continue;
        double w = fresnel_schlick(vh, f0) * smith_g(nv, nl, rough) * vh / (nv * nh);
        sacc += w * env_lookup(env, l);
    }
    return diffuse + m.spec * (sacc / double(spp));
}

struct RenderOutput {
    Image rgb;  // linear HDR
    Image mask; // 1 channel, {0,1}
};

inline RenderOutput reference_render(const PinholeCamera& cam,
                                     const std::vector<Vec3>& deformed,
                                     const std::vector<Vec3>& canonical,
                                     const std::vector<std::array<int, 3>>& faces,
                                     const std::vector<int>& labels,
                                     const EnvMap& env, const MaterialFn& matfn,
                                     int spp, uint64_t seed) {
    std::vector<Vec3> normals = vertex_normals(deformed, faces);
    GBuffer gb = rasterize(cam, deformed, canonical, normals, faces);
    RenderOutput out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.mask = Image(cam.width, cam.height, 1);
    for (int p = 0; p < cam.width * cam.height; ++p)
        out.mask.data[p] = gb.mask[p] ? 1.0f : 0.0f;
    Vec3 eye = cam.eye();
    int64_t npix = int64_t(gb.pixels.size());
    parallel_for(npix, 64, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            int p = gb.pixels[i];
            Vec3 n = gb.nd[p];
            Vec3 v = normalized(eye - gb.xd[p]);
            int region = pixel_region(gb, faces, labels, p);
            MaterialSample m = matfn(gb.xc[p], region);
            Vec3 c = reference_shade(n, v, m, f0_for_region(region), env, spp,
                                     hash_combine(seed, uint64_t(p)));
            for (int ch = 0; ch < 3; ++ch) out.rgb.data[size_t(p) * 3 + ch] = float(c[ch]);
        }
    });
    return out;
}

} // namespace af
