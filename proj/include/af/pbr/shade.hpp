#pragma once

#include <functional>
#include <memory>

#include "af/light/query.hpp"
#include "af/nn/tape.hpp"
#include "af/pbr/brdf.hpp"
#include "af/pbr/fglut.hpp"

namespace af {

// Split-sum shading: diffuse rho * PF(n, 1) plus specular
// k * PF(reflect, r) * (F0 * scale + bias).
inline Vec3 shade_splitsum_scalar(Vec3 n, Vec3 v, const MaterialSample& m, double f0,
                                  const std::function<Vec3(Vec3, double)>& light,
                                  const nn::FgTable& fg) {
    double nv = dot(n, v);
    if (nv <= 0.0) return {0, 0, 0};
    double rough = std::clamp(m.rough, kRoughnessMin, 1.0);
    Vec3 diffuse = m.rho * light(n, 1.0);
    Vec3 pf_s = light(reflect_about(v, n), rough);
    double s, b;
    nn::Tape::fg_sample(fg, rough, nv, s, b);
    return diffuse + (m.spec * (f0 * s + b)) * pf_s;
}

struct MaterialNodes {
    int rho = -1;   // [n x 3], sigmoid
    int rough = -1; // [n x 1], r_min + (1 - r_min) * sigmoid
    int spec = -1;  // [n x 1], exp
};

// Heads over the raw material network output [n x 5].
inline MaterialNodes material_heads(nn::Tape& t, int raw) {
    MaterialNodes m;
    m.rho = t.sigmoid(t.slice_cols(raw, 0, 3));
    m.rough = t.add_c(t.scale(t.sigmoid(t.slice_cols(raw, 3, 4)), 1.0 - kRoughnessMin), kRoughnessMin);
    m.spec = t.exp(t.slice_cols(raw, 4, 5));
    return m;
}

struct ShadeNodes {
    int rgb = -1;     // [n x 3], masked by the frozen n.v > 0 indicator
    int diffuse = -1; // [n x 3], unmasked diffuse term
    int light_d = -1; // [n x 3], diffuse light before the albedo product
    int ndotv = -1;   // [n x 1]
};

// nd and wo are unit rows; f0col is a constant [n x 1] of per-pixel F0.
// Backface visibility freezes to an indicator constant, so gradients stop at
// the n.v cutoff exactly like the scalar path's early-out.
inline ShadeNodes shade_splitsum(nn::Tape& t, int nd, int wo, const MaterialNodes& m, int f0col,
                                 const std::shared_ptr<const nn::FgTable>& fg, TapeLight& light) {
    ShadeNodes out;
    out.ndotv = t.row_dot(nd, wo);
    const nn::Tensor& nv = t.val(out.ndotv);
    nn::Tensor vis(nv.n, 1);
    for (int i = 0; i < nv.n; ++i) vis.at(i, 0) = nv.at(i, 0) > 0.0 ? 1.0 : 0.0;
    int vis_c = t.leaf(vis, false);
    int ones = t.leaf_full(nv.n, 1, 1.0, false);
    out.light_d = light.query(t, nd, ones);
    out.diffuse = t.mul(m.rho, out.light_d);
    int refl = t.sub(t.row_scale(nd, t.scale(out.ndotv, 2.0)), wo);
    int pf_s = light.query(t, refl, m.rough);
    int fgsb = t.fg_lookup(fg, m.rough, out.ndotv);
    int fterm = t.add(t.mul(f0col, t.slice_cols(fgsb, 0, 1)), t.slice_cols(fgsb, 1, 2));
    int specular = t.row_scale(pf_s, t.mul(m.spec, fterm));
    out.rgb = t.row_scale(t.add(out.diffuse, specular), vis_c);
    return out;
}

} // namespace af
