#pragma once

// Two-stage avatar optimization: vertex offsets, a deformation net, an
// appearance net, and a neural light are fit jointly against posed frames;
// the second stage freezes the deformation net and refits appearance with a
// hash-grid encoding.  Rendering reuses the exact training forward graph.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "af/core/toml.hpp"
#include "af/deform/lbs.hpp"
#include "af/deform/rig.hpp"
#include "af/light/fit.hpp"
#include "af/light/query.hpp"
#include "af/loss/losses.hpp"
#include "af/mesh/obj.hpp"
#include "af/mesh/trimesh.hpp"
#include "af/nn/adam.hpp"
#include "af/nn/checkpoint.hpp"
#include "af/nn/mlp.hpp"
#include "af/pbr/fglut.hpp"
#include "af/pbr/shade.hpp"
#include "af/pbr/tonemap.hpp"
#include "af/raster/raster.hpp"
#include "af/train/metrics.hpp"
#include "af/train/scene.hpp"

namespace af {

struct TrainConfig {
    int stage1_iters = 350;
    int stage2_iters = 200;
    int pretrain_iters = 200;
    int batch = 4;
    double lr_deform = 1e-3, lr_material = 1e-3, lr_light = 1e-3;
    double lr_vertex1 = 1e-3, lr_vertex2 = 1e-5;
    double upsample_fraction = 0.5; // event at floor(stage1_iters * fraction)
    bool upsample = true;
    bool material_hash_from_start = false; // stage-1 appearance uses the hash grid
    int deform_hidden = 128, deform_layers = 4, freq_octaves = 6;
    int material_hidden = 128, material_layers = 4;
    int s2_material_hidden = 64, s2_material_layers = 2;
    int light_hidden = 64, light_layers = 2;
    nn::HashGridSpec grid;
    int fg_rows = 64, fg_cols = 64, fg_samples = 4096;
    uint64_t seed = 42;
    int smooth_rows = 192;
    int pseudo_every = 10;
    int snapshot_every = 50;
    LossWeights weights;

    void validate() const {
        weights.validate();
        if (batch < 1) throw std::runtime_error("train: batch must be >= 1");
        if (stage1_iters < 1) throw std::runtime_error("train: stage1_iters must be >= 1");
        if (!(upsample_fraction > 0.0 && upsample_fraction < 1.0))
            throw std::runtime_error("train: upsample_fraction must be in (0,1)");
    }
};

inline TrainConfig train_from_toml(const Toml& t) {
    TrainConfig c;
    c.stage1_iters = int(t.get_int("train.stage1_iters", c.stage1_iters));
    c.stage2_iters = int(t.get_int("train.stage2_iters", c.stage2_iters));
    c.pretrain_iters = int(t.get_int("train.pretrain_iters", c.pretrain_iters));
    c.batch = int(t.get_int("train.batch", c.batch));
    c.lr_deform = t.get_float("train.lr_deform", c.lr_deform);
    c.lr_material = t.get_float("train.lr_material", c.lr_material);
    c.lr_light = t.get_float("train.lr_light", c.lr_light);
    c.lr_vertex1 = t.get_float("train.lr_vertex1", c.lr_vertex1);
    c.lr_vertex2 = t.get_float("train.lr_vertex2", c.lr_vertex2);
    c.upsample_fraction = t.get_float("train.upsample_fraction", c.upsample_fraction);
    c.upsample = t.get_bool("train.upsample", c.upsample);
    c.material_hash_from_start = t.get_bool("train.material_hash_from_start", c.material_hash_from_start);
    c.deform_hidden = int(t.get_int("train.deform_hidden", c.deform_hidden));
    c.deform_layers = int(t.get_int("train.deform_layers", c.deform_layers));
    c.freq_octaves = int(t.get_int("train.freq_octaves", c.freq_octaves));
    c.material_hidden = int(t.get_int("train.material_hidden", c.material_hidden));
    c.material_layers = int(t.get_int("train.material_layers", c.material_layers));
    c.s2_material_hidden = int(t.get_int("train.s2_material_hidden", c.s2_material_hidden));
    c.s2_material_layers = int(t.get_int("train.s2_material_layers", c.s2_material_layers));
    c.light_hidden = int(t.get_int("train.light_hidden", c.light_hidden));
    c.light_layers = int(t.get_int("train.light_layers", c.light_layers));
    c.seed = uint64_t(t.get_int("train.seed", int64_t(c.seed)));
    c.smooth_rows = int(t.get_int("train.smooth_rows", c.smooth_rows));
    c.pseudo_every = int(t.get_int("train.pseudo_every", c.pseudo_every));
    c.snapshot_every = int(t.get_int("train.snapshot_every", c.snapshot_every));
    c.weights.rgb = t.get_float("loss.rgb", c.weights.rgb);
    c.weights.pyramid = t.get_float("loss.pyramid", c.weights.pyramid);
    c.weights.mask = t.get_float("loss.mask", c.weights.mask);
    c.weights.flame = t.get_float("loss.flame", c.weights.flame);
    c.weights.laplacian = t.get_float("loss.laplacian", c.weights.laplacian);
    c.weights.normal = t.get_float("loss.normal", c.weights.normal);
    c.weights.smooth = t.get_float("loss.smooth", c.weights.smooth);
    c.weights.rough_reg = t.get_float("loss.rough_reg", c.weights.rough_reg);
    c.weights.spec_reg = t.get_float("loss.spec_reg", c.weights.spec_reg);
    c.weights.light_white = t.get_float("loss.light_white", c.weights.light_white);
    c.validate();
    return c;
}

// Uniform map of canonical space into [0,1]^3 with padding for learned offsets.
struct NormInfo {
    Vec3 lo{0, 0, 0};
    double scale = 1.0;

    Vec3 apply(Vec3 p) const { return (p - lo) * (1.0 / scale); }
};

inline NormInfo compute_norm(const std::vector<Vec3>& verts) {
    if (verts.empty()) throw std::runtime_error("norm: empty vertex set");
    Vec3 lo = verts[0], hi = verts[0];
    for (const Vec3& v : verts) {
        lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
        hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
    }
    Vec3 ext = hi - lo;
    NormInfo n;
    n.scale = 1.3 * std::max({ext.x, ext.y, ext.z, 1e-9});
    Vec3 center = (lo + hi) * 0.5;
    n.lo = center - Vec3{0.5, 0.5, 0.5} * n.scale;
    return n;
}

struct TrainedAssets {
    TriMesh mesh; // optimized canonical positions, offsets folded in
    DeformationRig rig;
    nn::Mlp deform_net, material_net, light_net;
    std::shared_ptr<const nn::FgTable> fg;
    NormInfo norm;
    std::vector<double> f0_by_region{kF0Default};
    int stage = 1;
};

inline void save_assets(TrainedAssets& a, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    save_obj(dir + "/mesh.obj", a.mesh);
    std::map<std::string, nn::Tensor> d, m, l;
    nn::collect_mlp(d, a.deform_net, "deform.");
    nn::collect_mlp(m, a.material_net, "material.");
    nn::collect_mlp(l, a.light_net, "light.");
    nn::save_tensors(dir + "/deform.flrw", d);
    nn::save_tensors(dir + "/material.flrw", m);
    nn::save_tensors(dir + "/light.flrw", l);
    save_fg_lut(dir + "/fg.bin", *a.fg);
    nlohmann::json j;
    j["stage"] = a.stage;
    j["norm_lo"] = {a.norm.lo.x, a.norm.lo.y, a.norm.lo.z};
    j["norm_scale"] = a.norm.scale;
    j["f0_by_region"] = a.f0_by_region;
    nlohmann::json rig;
    rig["n_j"] = a.rig.n_j;
    rig["n_e"] = a.rig.n_e;
    rig["seed"] = a.rig.seed;
    rig["jaw"] = a.rig.jaw;
    rig["jaw_axis"] = {a.rig.jaw_axis.x, a.rig.jaw_axis.y, a.rig.jaw_axis.z};
    rig["jaw_ref_angle"] = a.rig.jaw_ref_angle;
    for (const Vec3& p : a.rig.joints) rig["joints"].push_back({p.x, p.y, p.z});
    rig["sigma"] = a.rig.sigma;
    j["rig"] = rig;
    std::ofstream out(dir + "/meta.json");
    out << j.dump(1) << "\n";
    if (!out) throw std::runtime_error("save_assets: cannot write meta.json");
}

inline TrainedAssets load_assets(const std::string& dir) {
    for (const char* n : {"mesh.obj", "deform.flrw", "material.flrw", "light.flrw", "fg.bin", "meta.json"})
        if (!std::filesystem::exists(dir + "/" + n))
            throw std::runtime_error(std::string("missing asset: ") + n);
    TrainedAssets a;
    a.mesh = load_obj(dir + "/mesh.obj");
    a.deform_net = nn::load_mlp(nn::load_tensors(dir + "/deform.flrw"), "deform.");
    a.material_net = nn::load_mlp(nn::load_tensors(dir + "/material.flrw"), "material.");
    a.light_net = nn::load_mlp(nn::load_tensors(dir + "/light.flrw"), "light.");
    a.fg = std::make_shared<nn::FgTable>(load_fg_lut(dir + "/fg.bin"));
    std::ifstream in(dir + "/meta.json");
    nlohmann::json j = nlohmann::json::parse(in);
    a.stage = j.at("stage").get<int>();
    const auto& lo = j.at("norm_lo");
    a.norm.lo = {lo.at(0).get<double>(), lo.at(1).get<double>(), lo.at(2).get<double>()};
    a.norm.scale = j.at("norm_scale").get<double>();
    a.f0_by_region = j.at("f0_by_region").get<std::vector<double>>();
    const auto& rj = j.at("rig");
    a.rig.n_j = rj.at("n_j").get<int>();
    a.rig.n_e = rj.at("n_e").get<int>();
    a.rig.seed = rj.at("seed").get<uint64_t>();
    a.rig.jaw = rj.at("jaw").get<int>();
    const auto& ja = rj.at("jaw_axis");
    a.rig.jaw_axis = {ja.at(0).get<double>(), ja.at(1).get<double>(), ja.at(2).get<double>()};
    a.rig.jaw_ref_angle = rj.at("jaw_ref_angle").get<double>();
    for (const auto& p : rj.at("joints"))
        a.rig.joints.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    a.rig.sigma = rj.at("sigma").get<std::vector<double>>();
    return a;
}

// Per-topology constant maps; rebuilt at the upsample event.
struct TopoMaps {
    MeshAdjacency adj;
    NormalMaps nrm;
    std::shared_ptr<const nn::CsrMap> v_from_f; // vertex <- incident-face scatter
    std::shared_ptr<const nn::CsrMap> nbr_mean; // vertex <- neighbor average
};

inline TopoMaps build_topo_maps(const TriMesh& mesh) {
    TopoMaps m;
    m.adj = build_adjacency(mesh);
    m.nrm = make_normal_maps(mesh, m.adj);
    const int n = mesh.vertex_count();
    std::vector<std::vector<int>> incident(n);
    for (int f = 0; f < mesh.face_count(); ++f)
        for (int c = 0; c < 3; ++c) incident[mesh.faces[f][c]].push_back(f);
    auto vf = std::make_shared<nn::CsrMap>();
    vf->begin();
    for (int v = 0; v < n; ++v) {
        for (int f : incident[v]) vf->entry(f, 1.0);
        vf->end_row();
    }
    vf->finish(mesh.face_count());
    m.v_from_f = vf;
    auto nb = std::make_shared<nn::CsrMap>();
    nb->begin();
    for (int v = 0; v < n; ++v) {
        const auto& nbrs = m.adj.vertex_neighbors[v];
        for (int u : nbrs) nb->entry(u, 1.0 / double(nbrs.size()));
        nb->end_row();
    }
    nb->finish(n);
    m.nbr_mean = nb;
    return m;
}

struct CanonicalGraph {
    int offsets = -1; // leaf, trainable when requested
    int x = -1;       // [n x 3] base + offsets
    int xn = -1;      // [n x 3] normalized into [0,1]^3
    FieldNodes fields;
};

inline CanonicalGraph build_canonical_graph(nn::Tape& t, const nn::Tensor& base,
                                            const nn::Tensor& offsets, bool train_offsets,
                                            const NormInfo& norm, const nn::Mlp& deform_net,
                                            int n_e, int n_j) {
    CanonicalGraph g;
    int base_c = t.leaf(base, false);
    g.offsets = t.leaf(offsets, train_offsets);
    g.x = t.add(base_c, g.offsets);
    int shift = t.leaf(nn::Tensor::row3(-norm.lo.x, -norm.lo.y, -norm.lo.z), false);
    g.xn = t.scale(t.add_row(g.x, shift), 1.0 / norm.scale);
    g.fields = field_heads(t, deform_net.forward(t, g.xn, "deform"), n_e, n_j);
    return g;
}

struct FrameGraph {
    GBuffer gb;
    std::shared_ptr<nn::CsrMap> interp;
    int pixels = 0;
    int deformed = -1; // [n x 3]
    int pred = -1;     // [P x 3]
    int diffuse = -1;  // [P x 3]
    MaterialNodes mat;
    ShadeNodes shade;
};

// Shared forward path for training and rendering: pose -> LBS -> frozen
// coverage -> on-tape shading normals -> appearance -> split-sum shading.
inline FrameGraph build_frame_graph(nn::Tape& t, const CanonicalGraph& cg, const TriMesh& topo,
                                    const TopoMaps& maps, const DeformationRig& rig,
                                    const PoseExpr& pose, const PinholeCamera& cam,
                                    const nn::Mlp& material_net, TapeLight& light,
                                    const std::shared_ptr<const nn::FgTable>& fg,
                                    const std::vector<double>& f0_by_region) {
    FrameGraph out;
    out.deformed = lbs_tape(t, cg.x, cg.fields, rig, pose);
    const nn::Tensor& vd = t.val(out.deformed);
    const nn::Tensor& xv = t.val(cg.x);
    const int n = vd.n;
    std::vector<Vec3> dpos(n), cpos(n);
    for (int i = 0; i < n; ++i) {
        dpos[i] = {vd.at(i, 0), vd.at(i, 1), vd.at(i, 2)};
        cpos[i] = {xv.at(i, 0), xv.at(i, 1), xv.at(i, 2)};
    }
    out.gb = rasterize(cam, dpos, cpos, vertex_normals(dpos, topo.faces), topo.faces);
    out.pixels = int(out.gb.pixels.size());
    if (out.pixels == 0) return out;
    out.interp = build_interp_csr(out.gb, n, topo.faces);

    int q0 = t.csr(maps.nrm.corner[0], out.deformed);
    int q1 = t.csr(maps.nrm.corner[1], out.deformed);
    int q2 = t.csr(maps.nrm.corner[2], out.deformed);
    int fcross = t.cross3(t.sub(q1, q0), t.sub(q2, q0)); // area-weighted
    int vn = t.row_normalize(t.csr(maps.v_from_f, fcross));
    int nd = t.row_normalize(t.csr(out.interp, vn));
    int xd = t.csr(out.interp, out.deformed);
    int xn_px = t.csr(out.interp, cg.xn);
    Vec3 eye = cam.eye();
    int eye_row = t.leaf(nn::Tensor::row3(eye.x, eye.y, eye.z), false);
    int wo = t.row_normalize(t.add_row(t.scale(xd, -1.0), eye_row));

    out.mat = material_heads(t, material_net.forward(t, xn_px, "material"));
    nn::Tensor f0t(out.pixels, 1);
    for (int p = 0; p < out.pixels; ++p) {
        int region = pixel_region(out.gb, topo.faces, topo.region_labels, out.gb.pixels[p]);
        size_t slot = std::min(size_t(std::max(region, 0)), f0_by_region.size() - 1);
        f0t.at(p, 0) = f0_by_region[slot];
    }
    out.shade = shade_splitsum(t, nd, wo, out.mat, t.leaf(f0t, false), fg, light);
    out.pred = out.shade.rgb;
    out.diffuse = out.shade.diffuse;
    return out;
}

struct AvatarRender {
    Image rgb;  // linear radiance, zero outside coverage
    Image mask; // rasterizer coverage
    GBuffer gb;
};

// lut == nullptr renders with the neural light; otherwise the prefiltered stack.
inline AvatarRender render_avatar_frame(TrainedAssets& a, const TopoMaps& maps,
                                        const PoseExpr& pose, const PinholeCamera& cam,
                                        const PrefilteredEnv* lut = nullptr) {
    nn::Tape t;
    a.deform_net.bind(t, false);
    a.material_net.bind(t, false);
    NeuralTapeLight neural(&a.light_net);
    LutTapeLight table(lut);
    TapeLight* light = nullptr;
    if (lut) {
        light = &table;
    } else {
        a.light_net.bind(t, false);
        light = &neural;
    }
    const int n = a.mesh.vertex_count();
    nn::Tensor base(n, 3), zero_off(n, 3);
    for (int i = 0; i < n; ++i) {
        base.at(i, 0) = a.mesh.vertices[i].x;
        base.at(i, 1) = a.mesh.vertices[i].y;
        base.at(i, 2) = a.mesh.vertices[i].z;
    }
    zero_off.zero();
    CanonicalGraph cg =
        build_canonical_graph(t, base, zero_off, false, a.norm, a.deform_net, a.rig.n_e, a.rig.n_j);
    FrameGraph f = build_frame_graph(t, cg, a.mesh, maps, a.rig, pose, cam, a.material_net, *light,
                                     a.fg, a.f0_by_region);
    AvatarRender out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.mask = Image(cam.width, cam.height, 1);
    if (f.pixels > 0) {
        const nn::Tensor& pred = t.val(f.pred);
        for (int p = 0; p < f.pixels; ++p) {
            int pix = f.gb.pixels[p];
            int x = pix % cam.width, y = pix / cam.width;
            for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = float(pred.at(p, c));
        }
    }
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            out.mask.at(x, y, 0) = f.gb.mask[size_t(y) * cam.width + x] ? 1.0f : 0.0f;
    out.gb = std::move(f.gb);
    return out;
}

inline AvatarRender render_avatar_frame(TrainedAssets& a, const PoseExpr& pose,
                                        const PinholeCamera& cam,
                                        const PrefilteredEnv* lut = nullptr) {
    TopoMaps maps = build_topo_maps(a.mesh);
    return render_avatar_frame(a, maps, pose, cam, lut);
}

// Median per material channel over covered pixels of one posed render.
inline MaterialSample material_readout(TrainedAssets& a, const PoseExpr& pose,
                                       const PinholeCamera& cam) {
    nn::Tape t;
    a.deform_net.bind(t, false);
    a.material_net.bind(t, false);
    a.light_net.bind(t, false);
    NeuralTapeLight light(&a.light_net);
    const int n = a.mesh.vertex_count();
    nn::Tensor base(n, 3), zero_off(n, 3);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) base.at(i, c) = a.mesh.vertices[i][c];
    zero_off.zero();
    TopoMaps maps = build_topo_maps(a.mesh);
    CanonicalGraph cg =
        build_canonical_graph(t, base, zero_off, false, a.norm, a.deform_net, a.rig.n_e, a.rig.n_j);
    FrameGraph f = build_frame_graph(t, cg, a.mesh, maps, a.rig, pose, cam, a.material_net, light,
                                     a.fg, a.f0_by_region);
    if (f.pixels == 0) throw std::runtime_error("material_readout: no coverage");
    auto median_col = [&](int node, int col) {
        const nn::Tensor& v = t.val(node);
        std::vector<double> vals(v.n);
        for (int i = 0; i < v.n; ++i) vals[i] = v.at(i, col);
        std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
        return vals[vals.size() / 2];
    };
    MaterialSample m;
    m.rho = {median_col(f.mat.rho, 0), median_col(f.mat.rho, 1), median_col(f.mat.rho, 2)};
    m.rough = median_col(f.mat.rough, 0);
    m.spec = median_col(f.mat.spec, 0);
    return m;
}

// --- evaluation ---------------------------------------------------------------

struct SplitEval {
    double l1 = 0, psnr = 0, ssim = 0, normal_cos = 0;
    int frames = 0;
    bool defined = false;
};

inline GBuffer gt_frame_gbuffer(const Dataset& ds, int fi) {
    std::vector<Vec3> def =
        lbs_deform(ds.canonical.vertices, ds.rig.template_fields, ds.rig, ds.frames[fi].pose);
    return rasterize(ds.camera, def, ds.canonical.vertices,
                     vertex_normals(def, ds.canonical.faces), ds.canonical.faces);
}

// Masked metrics in display space plus mean normal cosine against the
// ground-truth surface on the coverage intersection.
inline SplitEval eval_split(TrainedAssets& a, const Dataset& ds, bool test_split,
                            const PrefilteredEnv* lut = nullptr) {
    SplitEval ev;
    TopoMaps maps = build_topo_maps(a.mesh);
    std::vector<int> idx = test_split ? ds.test_indices() : ds.train_indices();
    double cos_sum = 0.0;
    long cos_n = 0;
    for (int fi : idx) {
        AvatarRender r = render_avatar_frame(a, maps, ds.frames[fi].pose, ds.camera, lut);
        Image gt = ds.frame_image(fi);
        Image gmask = ds.frame_mask(fi);
        MetricsResult mr = compute_metrics(tonemap_image(r.rgb), tonemap_image(gt), gmask);
        if (mr.defined) {
            ev.l1 += mr.l1;
            ev.psnr += mr.psnr;
            ev.ssim += mr.ssim;
            ev.frames += 1;
        }
        GBuffer gtb = gt_frame_gbuffer(ds, fi);
        for (size_t p = 0; p < gtb.face.size(); ++p) {
            if (gtb.face[p] < 0 || r.gb.face[p] < 0) continue;
            cos_sum += std::clamp(dot(gtb.nd[p], r.gb.nd[p]), -1.0, 1.0);
            ++cos_n;
        }
    }
    if (ev.frames > 0) {
        ev.l1 /= ev.frames;
        ev.psnr /= ev.frames;
        ev.ssim /= ev.frames;
        ev.defined = true;
    }
    ev.normal_cos = cos_n > 0 ? cos_sum / double(cos_n) : 0.0;
    return ev;
}

// --- training -----------------------------------------------------------------

struct TrainResult {
    TrainedAssets assets;
    SplitEval stage1_test, stage2_test;
    bool aborted = false;
};

inline TrainResult train_avatar(const Dataset& ds, const TrainConfig& cfg_in,
                                const std::string& out_dir) {
    TrainConfig cfg = cfg_in;
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    TriMesh mesh = ds.init_mesh; // base positions; learned offsets live in a tensor
    mesh.offsets.assign(mesh.vertices.size(), Vec3{0, 0, 0});
    DeformationRig rig = ds.rig;
    NormInfo norm = compute_norm(ds.init_mesh.vertices);
    auto fg = std::make_shared<const nn::FgTable>(bake_fg_lut(cfg.fg_rows, cfg.fg_cols, cfg.fg_samples));

    nn::Mlp D;
    D.spec.in = 3;
    D.spec.hidden.assign(size_t(cfg.deform_layers), cfg.deform_hidden);
    D.spec.out = 3 * rig.n_e + 27 * rig.n_j + rig.n_j;
    D.spec.enc = nn::Encoding::Frequency;
    D.spec.freq_octaves = cfg.freq_octaves;
    D.init(hash_combine(cfg.seed, 1));

    auto make_material_freq = [&]() {
        nn::Mlp m;
        m.spec.in = 3;
        m.spec.hidden.assign(size_t(cfg.material_layers), cfg.material_hidden);
        m.spec.out = 5;
        m.spec.enc = nn::Encoding::Frequency;
        m.spec.freq_octaves = cfg.freq_octaves;
        m.init(hash_combine(cfg.seed, 2));
        return m;
    };
    auto make_material_hash = [&](uint64_t salt) {
        nn::Mlp m;
        m.spec.in = 3;
        m.spec.hidden.assign(size_t(cfg.s2_material_layers), cfg.s2_material_hidden);
        m.spec.out = 5;
        m.spec.enc = nn::Encoding::HashGrid;
        m.spec.grid = cfg.grid;
        m.init(hash_combine(cfg.seed, salt));
        return m;
    };
    nn::Mlp M = cfg.material_hash_from_start ? make_material_hash(2) : make_material_freq();
    nn::Mlp L = make_light_net(hash_combine(cfg.seed, 3), cfg.light_hidden, cfg.light_layers);

    const auto tensor_from = [](const std::vector<Vec3>& v) {
        nn::Tensor t(int(v.size()), 3);
        for (size_t i = 0; i < v.size(); ++i)
            for (int c = 0; c < 3; ++c) t.at(int(i), c) = v[i][c];
        return t;
    };
    nn::Tensor base = tensor_from(mesh.vertices);
    nn::Tensor offsets(mesh.vertex_count(), 3);
    offsets.zero();

    TopoMaps maps = build_topo_maps(mesh);
    PyramidMaps pyr = make_pyramid_maps(ds.scene.width, ds.scene.height);
    const auto effective = [&]() {
        std::vector<Vec3> v(mesh.vertices);
        for (size_t i = 0; i < v.size(); ++i)
            for (int c = 0; c < 3; ++c) v[i][c] += offsets.at(int(i), c);
        return v;
    };
    BlendFields pseudo = pseudo_gt_fields(rig, effective());

    std::vector<int> train_idx = ds.train_indices();
    if (train_idx.empty()) throw std::runtime_error("train: dataset has no training frames");
    std::vector<Image> gt_img(ds.frames.size()), gt_mask(ds.frames.size());
    for (size_t i = 0; i < ds.frames.size(); ++i) {
        gt_img[i] = ds.frame_image(int(i));
        gt_mask[i] = ds.frame_mask(int(i));
    }

    // Pin the albedo/light gauge at the data: the light opens white at the
    // masked mean luminance, the albedo head opens at the data chroma with
    // luminance 1/2, and the specular head opens at the statistical prior.
    {
        Vec3 mean{0, 0, 0};
        double count = 0;
        for (int fi : train_idx) {
            const Image& im = gt_img[size_t(fi)];
            const Image& mk = gt_mask[size_t(fi)];
            for (int p = 0; p < im.w * im.h; ++p) {
                if (mk.data[size_t(p)] <= 0.5f) continue;
                for (int c = 0; c < 3; ++c) mean[c] += im.data[size_t(p) * 3 + c];
                count += 1;
            }
        }
        if (count > 0) {
            mean = mean * (1.0 / count);
            double lum = (mean.x + mean.y + mean.z) / 3.0;
            double yw = light_encode({2.0 * lum, 2.0 * lum, 2.0 * lum}).x;
            nn::Tensor& lb = L.weights.back();
            for (int c = 0; c < 3; ++c) lb.at(0, c) = yw;
            nn::Tensor& mb = M.weights.back();
            if (lum > 0.0) {
                for (int c = 0; c < 3; ++c) {
                    double rho0 = std::clamp(0.5 * mean[c] / lum, 0.05, 0.95);
                    mb.at(0, c) = std::log(rho0 / (1.0 - rho0));
                }
            }
            mb.at(0, 4) = std::log(cfg.weights.mu_spec);
        }
    }

    nn::Adam opt_d, opt_m, opt_l, opt_v;
    opt_d.init(D.params());
    opt_m.init(M.params());
    opt_l.init(L.params());
    std::vector<nn::Tensor*> vparam{&offsets};
    opt_v.init(vparam);

    double lr_v = cfg.lr_vertex1;
    LossWeights w = cfg.weights;
    std::vector<double> f0s{kF0Default};
    bool d_trainable = true;
    int stage = 1;

    nn::Tape t;

    // Deformation pretraining against the template prior fields; no rendering.
    // Runs on its own optimizer so stage 1 starts with fresh Adam moments.
    {
        nn::Adam opt_pre;
        opt_pre.init(D.params());
        for (int it = 0; it < cfg.pretrain_iters; ++it) {
            t.reset();
            D.bind(t, true);
            CanonicalGraph cg =
                build_canonical_graph(t, base, offsets, false, norm, D, rig.n_e, rig.n_j);
            int loss = loss_flame_reg(t, cg.fields.E, cg.fields.P, cg.fields.W, pseudo, w.inner_e,
                                      w.inner_p, w.inner_w);
            t.backward(loss);
            std::vector<const nn::Tensor*> g;
            for (int id : D.leaf_ids) g.push_back(&t.grad(id));
            opt_pre.step(D.params(), g, cfg.lr_deform);
        }
    }

    struct Snapshot {
        nn::Tensor offsets;
        std::vector<nn::Tensor> d, m, l;
    };
    auto take_snapshot = [&]() {
        Snapshot s;
        s.offsets = offsets;
        for (nn::Tensor* p : D.params()) s.d.push_back(*p);
        for (nn::Tensor* p : M.params()) s.m.push_back(*p);
        for (nn::Tensor* p : L.params()) s.l.push_back(*p);
        return s;
    };
    auto restore_snapshot = [&](const Snapshot& s) {
        offsets = s.offsets;
        auto dp = D.params();
        for (size_t i = 0; i < dp.size(); ++i) *dp[i] = s.d[i];
        auto mp = M.params();
        for (size_t i = 0; i < mp.size(); ++i) *mp[i] = s.m[i];
        auto lp = L.params();
        for (size_t i = 0; i < lp.size(); ++i) *lp[i] = s.l[i];
    };

    auto snapshot_assets = [&]() {
        TrainedAssets a;
        a.mesh = mesh;
        std::vector<Vec3> eff = effective();
        a.mesh.vertices = eff;
        a.mesh.offsets.assign(eff.size(), Vec3{0, 0, 0});
        a.rig = rig;
        a.deform_net = D;
        a.material_net = M;
        a.light_net = L;
        a.fg = fg;
        a.norm = norm;
        a.f0_by_region = f0s;
        a.stage = stage;
        return a;
    };

    auto do_upsample = [&]() {
        for (int i = 0; i < mesh.vertex_count(); ++i)
            for (int c = 0; c < 3; ++c) mesh.offsets[i][c] = offsets.at(i, c);
        auto [m2, f2] = upsample_midpoint(mesh, pseudo);
        mesh = std::move(m2);
        offsets = tensor_from(mesh.offsets);
        mesh.offsets.assign(mesh.vertices.size(), Vec3{0, 0, 0});
        base = tensor_from(mesh.vertices);
        maps = build_topo_maps(mesh);
        pseudo = pseudo_gt_fields(rig, effective());
        opt_v = nn::Adam{};
        opt_v.init(vparam);
        lr_v *= 0.75;
        w.laplacian *= 4.0;
        w.normal *= 4.0;
    };

    bool aborted = false;
    auto run_stage = [&](int iters, int upsample_at, const std::string& csv_path) {
        FILE* csv = std::fopen(csv_path.c_str(), "w");
        if (!csv) throw std::runtime_error("train: cannot write " + csv_path);
        Snapshot snap = take_snapshot();
        for (int it = 0; it < iters; ++it) {
            if (it == upsample_at) {
                do_upsample();
                snap = take_snapshot();
            } else if (it % cfg.pseudo_every == 0) {
                pseudo = pseudo_gt_fields(rig, effective());
            }
            try {
                t.reset();
                D.bind(t, d_trainable);
                M.bind(t, true);
                L.bind(t, true);
                NeuralTapeLight light(&L);
                CanonicalGraph cg =
                    build_canonical_graph(t, base, offsets, true, norm, D, rig.n_e, rig.n_j);
                int rgb_n = -1, pyr_n = -1, lw_n = -1, rr_n = -1, sr_n = -1;
                int nf = 0;
                double mask_acc = 0.0;
                for (int k = 0; k < cfg.batch; ++k) {
                    int fi = train_idx[(size_t(it) * cfg.batch + k) % train_idx.size()];
                    FrameGraph f = build_frame_graph(t, cg, mesh, maps, rig, ds.frames[fi].pose,
                                                     ds.camera, M, light, fg, f0s);
                    Image cov(ds.scene.width, ds.scene.height, 1);
                    for (size_t p = 0; p < f.gb.mask.size(); ++p)
                        cov.data[p] = f.gb.mask[p] ? 1.0f : 0.0f;
                    mask_acc += loss_mask_value(cov, gt_mask[fi]);
                    if (f.pixels == 0) continue;
                    ++nf;
                    nn::Tensor gt_px(f.pixels, 3), mk_px(f.pixels, 1);
                    for (int p = 0; p < f.pixels; ++p) {
                        int pix = f.gb.pixels[p];
                        int x = pix % ds.scene.width, y = pix / ds.scene.width;
                        for (int c = 0; c < 3; ++c) gt_px.at(p, c) = gt_img[fi].at(x, y, c);
                        mk_px.at(p, 0) = gt_mask[fi].at(x, y, 0) > 0.5f ? 1.0 : 0.0;
                    }
                    int lrgb = loss_rgb_log(t, f.pred, t.leaf(gt_px, false), t.leaf(mk_px, false),
                                            w.log_eps);
                    auto scat = std::make_shared<nn::CsrMap>();
                    scat->begin();
                    {
                        std::vector<int> slot(size_t(ds.scene.width) * ds.scene.height, -1);
                        for (int p = 0; p < f.pixels; ++p) slot[f.gb.pixels[p]] = p;
                        for (size_t pix = 0; pix < slot.size(); ++pix) {
                            if (slot[pix] >= 0) scat->entry(slot[pix], 1.0);
                            scat->end_row();
                        }
                    }
                    scat->finish(f.pixels);
                    int pred_full = t.csr(scat, f.pred);
                    nn::Tensor gt_full(ds.scene.width * ds.scene.height, 3);
                    for (size_t p = 0; p < size_t(ds.scene.width) * ds.scene.height; ++p)
                        for (int c = 0; c < 3; ++c) gt_full.at(int(p), c) = gt_img[fi].data[p * 3 + c];
                    int lpyr = loss_pyramid(t, pred_full, t.leaf(gt_full, false), pyr);
                    int llw = loss_light_white(t, f.shade.light_d);
                    int lrr = loss_stat_reg(t, f.mat.rough, w.mu_rough, w.sigma_rough);
                    int lsr = loss_stat_reg(t, f.mat.spec, w.mu_spec, w.sigma_spec);
                    rgb_n = rgb_n < 0 ? lrgb : t.add(rgb_n, lrgb);
                    pyr_n = pyr_n < 0 ? lpyr : t.add(pyr_n, lpyr);
                    lw_n = lw_n < 0 ? llw : t.add(lw_n, llw);
                    rr_n = rr_n < 0 ? lrr : t.add(rr_n, lrr);
                    sr_n = sr_n < 0 ? lsr : t.add(sr_n, lsr);
                }
                auto avg = [&](int node) {
                    return node < 0 ? t.leaf_full(1, 1, 0.0, false) : t.scale(node, 1.0 / nf);
                };
                LossAccumulator acc(&t);
                acc.add("rgb", avg(rgb_n), w.rgb);
                acc.add("vgg", avg(pyr_n), w.pyramid);
                nn::Tensor mz(1, 1);
                mz.at(0, 0) = mask_acc / cfg.batch;
                acc.add("mask", t.leaf(mz, false), w.mask);
                acc.add("flame",
                        loss_flame_reg(t, cg.fields.E, cg.fields.P, cg.fields.W, pseudo, w.inner_e,
                                       w.inner_p, w.inner_w),
                        w.flame);
                int delta = t.sub(cg.x, t.csr(maps.nbr_mean, cg.x));
                acc.add("laplacian", loss_laplacian(t, delta), w.laplacian);
                acc.add("normal", loss_normal_consistency(t, cg.x, maps.nrm), w.normal);
                {
                    Rng pick(hash_combine(hash_combine(cfg.seed, 0x5e1ec7), uint64_t(stage * 1000003 + it)));
                    int rows = std::min(cfg.smooth_rows, mesh.vertex_count());
                    std::vector<int> sel(rows);
                    for (int& s : sel) s = int(pick.next_u64() % uint64_t(mesh.vertex_count()));
                    int xs = t.csr(gather_map(sel, mesh.vertex_count()), cg.xn);
                    acc.add("smooth",
                            loss_smooth(t, M, xs, w.smooth_sigma,
                                        hash_combine(cfg.seed, uint64_t(stage * 7368787 + it)),
                                        w.barron_alpha, w.barron_c),
                            w.smooth);
                }
                acc.add("rough", avg(rr_n), w.rough_reg);
                acc.add("spec", avg(sr_n), w.spec_reg);
                acc.add("light", avg(lw_n), w.light_white);
                double total = t.val(acc.total).at(0, 0);
                if (!std::isfinite(total)) throw std::runtime_error("non-finite total loss");
                t.backward(acc.total);
                auto grads_of = [&](const nn::Mlp& net) {
                    std::vector<const nn::Tensor*> g;
                    for (int id : net.leaf_ids) g.push_back(&t.grad(id));
                    return g;
                };
                if (d_trainable) opt_d.step(D.params(), grads_of(D), cfg.lr_deform);
                opt_m.step(M.params(), grads_of(M), cfg.lr_material);
                opt_l.step(L.params(), grads_of(L), cfg.lr_light);
                std::vector<const nn::Tensor*> vg{&t.grad(cg.offsets)};
                opt_v.step(vparam, vg, lr_v);
                LossReport rep = LossReport::from(acc, it);
                if (it == 0) rep.csv_header(csv);
                rep.csv_row(csv);
                if (it % cfg.snapshot_every == 0 && it > 0) snap = take_snapshot();
            } catch (const std::exception& e) {
                std::fprintf(stderr, "train: stage %d iteration %d failed (%s); restoring snapshot\n",
                             stage, it, e.what());
                restore_snapshot(snap);
                aborted = true;
                break;
            }
        }
        std::fclose(csv);
    };

    int upsample_at = cfg.upsample ? int(cfg.stage1_iters * cfg.upsample_fraction) : -1;
    run_stage(cfg.stage1_iters, upsample_at, out_dir + "/loss_stage1.csv");

    TrainResult res;
    {
        TrainedAssets a1 = snapshot_assets();
        res.stage1_test = eval_split(a1, ds, true);
    }

    if (cfg.stage2_iters > 0 && !aborted) {
        stage = 2;
        d_trainable = false;
        // The fresh appearance net opens at the previous stage's median raw
        // material so the handoff starts from the converged global decomposition.
        {
            std::vector<Vec3> eff = effective();
            nn::Tensor xn(int(eff.size()), 3);
            for (size_t i = 0; i < eff.size(); ++i)
                for (int c = 0; c < 3; ++c)
                    xn.at(int(i), c) = (eff[i][c] - norm.lo[c]) / norm.scale;
            nn::Tensor raw = M.infer(xn);
            M = make_material_hash(4);
            nn::Tensor& mb = M.weights.back();
            for (int c = 0; c < 5; ++c) {
                std::vector<double> col(size_t(raw.n));
                for (int i = 0; i < raw.n; ++i) col[size_t(i)] = raw.at(i, c);
                std::nth_element(col.begin(), col.begin() + col.size() / 2, col.end());
                mb.at(0, c) = col[col.size() / 2];
            }
        }
        opt_m = nn::Adam{};
        opt_m.init(M.params());
        opt_l = nn::Adam{};
        opt_l.init(L.params());
        opt_v = nn::Adam{};
        opt_v.init(vparam);
        lr_v = cfg.lr_vertex2;
        f0s = {kF0Default, kF0Skin};
        run_stage(cfg.stage2_iters, -1, out_dir + "/loss_stage2.csv");
        TrainedAssets a2 = snapshot_assets();
        res.stage2_test = eval_split(a2, ds, true);
    }

    res.assets = snapshot_assets();
    res.aborted = aborted;

    FILE* mt = std::fopen((out_dir + "/metrics.csv").c_str(), "w");
    if (mt) {
        std::fprintf(mt, "stage,split,frames,l1,psnr,ssim,normal_cos\n");
        std::fprintf(mt, "1,test,%d,%.6g,%.6g,%.6g,%.6g\n", res.stage1_test.frames,
                     res.stage1_test.l1, res.stage1_test.psnr, res.stage1_test.ssim,
                     res.stage1_test.normal_cos);
        if (cfg.stage2_iters > 0)
            std::fprintf(mt, "2,test,%d,%.6g,%.6g,%.6g,%.6g\n", res.stage2_test.frames,
                         res.stage2_test.l1, res.stage2_test.psnr, res.stage2_test.ssim,
                         res.stage2_test.normal_cos);
        std::fclose(mt);
    }
    return res;
}

} // namespace af
