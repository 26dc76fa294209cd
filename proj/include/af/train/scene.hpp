#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "af/core/toml.hpp"
#include "af/deform/lbs.hpp"
#include "af/deform/rig.hpp"
#include "af/light/envmap.hpp"
#include "af/mesh/obj.hpp"
#include "af/mesh/trimesh.hpp"
#include "af/pbr/reference.hpp"
#include "af/raster/camera.hpp"

namespace af {

struct RegionMaterial {
    Vec3 rho{0.5, 0.5, 0.5};
    double rough = 0.5;
    double spec = 0.5;
};

struct SceneConfig {
    std::string type = "head"; // "head" | "sphere"
    int icosphere_subdiv = 3;
    double radius = 1.0;
    double bump_amplitude = 0.05;
    double bump_freq = 4.5; // upper bound of the radial bump frequency band
    uint64_t shape_seed = 5;
    int frames = 25;
    int width = 64, height = 64;
    double fov_deg = 34.0;
    double cam_distance = 3.4;
    int env_width = 64, env_height = 32, env_blobs = 4;
    uint64_t env_seed = 7;
    int n_j = 4, n_e = 10;
    uint64_t rig_seed = 11;
    uint64_t traj_seed = 13;
    double jaw_ref_angle = 0.3; // 0 disables the jaw-open remap
    double pose_amp = 0.15, jaw_amp = 0.12, psi_amp = 0.8;
    int spp = 256;
    uint64_t mc_seed = 17;
    std::vector<RegionMaterial> materials = {{{0.62, 0.38, 0.30}, 0.45, 0.45},
                                             {{0.30, 0.42, 0.60}, 0.25, 0.70}};

    void validate() const {
        if (frames < 2) throw std::runtime_error("scene: frame count must be >= 2");
        if (materials.empty()) throw std::runtime_error("scene: at least one region material");
        for (const RegionMaterial& m : materials) {
            for (int c = 0; c < 3; ++c)
                if (!(m.rho[c] >= 0.0 && m.rho[c] <= 1.0)) throw std::runtime_error("scene: albedo outside [0,1]");
            if (!(m.rough >= kRoughnessMin && m.rough <= 1.0)) throw std::runtime_error("scene: roughness outside range");
            if (!(m.spec >= 0.0)) throw std::runtime_error("scene: negative specular intensity");
        }
        if (type != "head" && type != "sphere") throw std::runtime_error("scene: unknown type " + type);
    }

    static SceneConfig sphere_default() {
        SceneConfig s;
        s.type = "sphere";
        s.bump_amplitude = 0.0;
        s.jaw_ref_angle = 0.0;
        s.psi_amp = 0.4;
        s.materials = {{{0.6, 0.3, 0.2}, 0.4, 0.5}};
        return s;
    }
};

inline SceneConfig scene_from_toml(const Toml& t) {
    SceneConfig s;
    s.type = t.get_string("scene.type", s.type);
    s.icosphere_subdiv = int(t.get_int("scene.icosphere_subdiv", s.icosphere_subdiv));
    s.radius = t.get_float("scene.radius", s.radius);
    s.bump_amplitude = t.get_float("scene.bump_amplitude", s.bump_amplitude);
    s.bump_freq = t.get_float("scene.bump_freq", s.bump_freq);
    s.shape_seed = uint64_t(t.get_int("scene.shape_seed", int64_t(s.shape_seed)));
    s.frames = int(t.get_int("scene.frames", s.frames));
    s.width = int(t.get_int("scene.width", s.width));
    s.height = int(t.get_int("scene.height", s.height));
    s.fov_deg = t.get_float("scene.fov_deg", s.fov_deg);
    s.cam_distance = t.get_float("scene.cam_distance", s.cam_distance);
    s.env_width = int(t.get_int("scene.env_width", s.env_width));
    s.env_height = int(t.get_int("scene.env_height", s.env_height));
    s.env_blobs = int(t.get_int("scene.env_blobs", s.env_blobs));
    s.env_seed = uint64_t(t.get_int("scene.env_seed", int64_t(s.env_seed)));
    s.n_j = int(t.get_int("scene.n_j", s.n_j));
    s.n_e = int(t.get_int("scene.n_e", s.n_e));
    s.rig_seed = uint64_t(t.get_int("scene.rig_seed", int64_t(s.rig_seed)));
    s.traj_seed = uint64_t(t.get_int("scene.traj_seed", int64_t(s.traj_seed)));
    s.jaw_ref_angle = t.get_float("scene.jaw_ref_angle", s.jaw_ref_angle);
    s.pose_amp = t.get_float("scene.pose_amp", s.pose_amp);
    s.jaw_amp = t.get_float("scene.jaw_amp", s.jaw_amp);
    s.psi_amp = t.get_float("scene.psi_amp", s.psi_amp);
    s.spp = int(t.get_int("scene.spp", s.spp));
    s.mc_seed = uint64_t(t.get_int("scene.mc_seed", int64_t(s.mc_seed)));
    std::vector<RegionMaterial> mats;
    for (int r = 0; r < 8; ++r) {
        std::string key = "materials.region" + std::to_string(r);
        std::vector<double> v = t.get_float_array(key, {});
        if (v.empty()) break;
        if (v.size() != 5) throw std::runtime_error("scene: " + key + " needs 5 values [r g b rough spec]");
        mats.push_back({{v[0], v[1], v[2]}, v[3], v[4]});
    }
    if (!mats.empty()) s.materials = mats;
    s.validate();
    return s;
}

// Smooth authoring surface: squashed icosphere for "head", plain sphere
// otherwise.  Labels: polar cap -> other, rest skin.
inline TriMesh make_scene_template(const SceneConfig& cfg) {
    TriMesh mesh = make_icosphere(cfg.icosphere_subdiv, cfg.radius);
    if (cfg.type == "head") {
        for (Vec3& v : mesh.vertices) {
            v.x *= 0.88;
            v.z *= 1.08;
        }
        for (size_t i = 0; i < mesh.vertices.size(); ++i) {
            Vec3 d = normalized(mesh.vertices[i]);
            mesh.region_labels[i] = std::acos(std::clamp(d.z, -1.0, 1.0)) < 0.7 ? kRegionOther : kRegionSkin;
        }
    }
    return mesh;
}

// Subject surface: adds seeded low-frequency radial bumps to the template.
// The training start mesh stays smooth, so the bumps are what vertex offsets
// must recover.
inline TriMesh apply_scene_bumps(const SceneConfig& cfg, const TriMesh& base) {
    TriMesh mesh = base;
    if (cfg.bump_amplitude == 0.0) return mesh;
    for (Vec3& v : mesh.vertices) {
        Vec3 d = normalized(v);
        double s = 0.0;
        for (int k = 0; k < 4; ++k) {
            Vec3 f = detail::seeded_unit(cfg.shape_seed, 401, uint64_t(k)) *
                     detail::seeded_range(cfg.shape_seed, 402, uint64_t(k), 0, 0.45 * cfg.bump_freq,
                                          cfg.bump_freq);
            double phase = 2.0 * kPi * keyed_uniform(cfg.shape_seed, 403, uint64_t(k), 0);
            s += std::sin(dot(f, d) + phase);
        }
        v += d * (cfg.bump_amplitude * cfg.radius * 0.35 * s);
    }
    return mesh;
}

inline PinholeCamera scene_camera(const SceneConfig& cfg) {
    return make_lookat({0.0, cfg.cam_distance * cfg.radius, 0.0}, {0, 0, 0}, {0, 0, 1},
                       cfg.fov_deg, cfg.width, cfg.height);
}

// Smooth seeded trajectories; zero amplitudes give the identity pose.
inline PoseExpr pose_for_frame(const SceneConfig& cfg, const DeformationRig& rig, int i) {
    PoseExpr p = rest_pose(rig);
    double t = cfg.frames > 1 ? double(i) / cfg.frames : 0.0;
    for (int j = 0; j < rig.n_j; ++j) {
        if (j == rig.jaw) continue;
        Vec3 axis = detail::seeded_unit(cfg.traj_seed, 501, uint64_t(j));
        double freq = 1.0 + double(j % 2);
        double phase = 2.0 * kPi * keyed_uniform(cfg.traj_seed, 502, uint64_t(j), 0);
        double ang = cfg.pose_amp * std::sin(2.0 * kPi * freq * t + phase);
        if (ang != 0.0) p.theta[j].R = Mat3::axis_angle(axis, ang);
    }
    if (rig.jaw >= 0) {
        double phase = 2.0 * kPi * keyed_uniform(cfg.traj_seed, 503, 0, 0);
        double beta = rig.jaw_ref_angle + cfg.jaw_amp * std::sin(2.0 * kPi * t + phase);
        double rel = beta - rig.jaw_ref_angle;
        if (rel != 0.0) p.theta[rig.jaw].R = Mat3::axis_angle(rig.jaw_axis, rel);
    }
    for (int e = 0; e < rig.n_e; ++e) {
        double freq = 1.0 + double(e % 3);
        double phase = 2.0 * kPi * keyed_uniform(cfg.traj_seed, 504, uint64_t(e), 0);
        double v = cfg.psi_amp * std::sin(2.0 * kPi * freq * t + phase);
        p.psi[e] = v == 0.0 ? 0.0 : v;
    }
    return p;
}

inline MaterialFn scene_material_fn(const SceneConfig& cfg) {
    std::vector<RegionMaterial> mats = cfg.materials;
    return [mats](const Vec3&, int region) {
        const RegionMaterial& m = mats[std::min<size_t>(size_t(std::max(region, 0)), mats.size() - 1)];
        return MaterialSample{m.rho, m.rough, m.spec};
    };
}

struct FrameRecord {
    PoseExpr pose;
    std::string image_path, mask_path; // relative to dataset root
    bool test = false;
};

struct Dataset {
    std::string root;
    SceneConfig scene;
    TriMesh template_mesh; // closed-jaw smooth authoring shape
    TriMesh init_mesh;     // jaw-open smooth mesh, the optimization start
    TriMesh canonical;     // jaw-open subject geometry (held out for evaluation)
    DeformationRig rig;    // template_verts point at the init positions
    EnvMap env;
    PinholeCamera camera;
    std::vector<FrameRecord> frames;

    std::vector<int> train_indices() const {
        std::vector<int> idx;
        for (int i = 0; i < int(frames.size()); ++i)
            if (!frames[i].test) idx.push_back(i);
        return idx;
    }
    std::vector<int> test_indices() const {
        std::vector<int> idx;
        for (int i = 0; i < int(frames.size()); ++i)
            if (frames[i].test) idx.push_back(i);
        return idx;
    }
    Image frame_image(int i) const { return read_pfm(root + "/" + frames[i].image_path); }
    Image frame_mask(int i) const { return read_pfm(root + "/" + frames[i].mask_path); }
};

namespace detail {

inline nlohmann::json pose_to_json(const PoseExpr& p) {
    nlohmann::json j;
    for (const Rigid& t : p.theta) {
        nlohmann::json one;
        for (int k = 0; k < 9; ++k) one.push_back(t.R.m[k]);
        one.push_back(t.t.x);
        one.push_back(t.t.y);
        one.push_back(t.t.z);
        j["theta"].push_back(one);
    }
    j["psi"] = p.psi;
    return j;
}

inline PoseExpr pose_from_json(const nlohmann::json& j) {
    PoseExpr p;
    for (const auto& one : j.at("theta")) {
        Rigid t;
        for (int k = 0; k < 9; ++k) t.R.m[k] = one.at(k).get<double>();
        t.t = {one.at(9).get<double>(), one.at(10).get<double>(), one.at(11).get<double>()};
        p.theta.push_back(t);
    }
    p.psi = j.at("psi").get<std::vector<double>>();
    return p;
}

inline nlohmann::json scene_to_json(const SceneConfig& s) {
    nlohmann::json j;
    j["type"] = s.type;
    j["icosphere_subdiv"] = s.icosphere_subdiv;
    j["radius"] = s.radius;
    j["bump_amplitude"] = s.bump_amplitude;
    j["bump_freq"] = s.bump_freq;
    j["shape_seed"] = s.shape_seed;
    j["frames"] = s.frames;
    j["width"] = s.width;
    j["height"] = s.height;
    j["fov_deg"] = s.fov_deg;
    j["cam_distance"] = s.cam_distance;
    j["env_width"] = s.env_width;
    j["env_height"] = s.env_height;
    j["env_blobs"] = s.env_blobs;
    j["env_seed"] = s.env_seed;
    j["n_j"] = s.n_j;
    j["n_e"] = s.n_e;
    j["rig_seed"] = s.rig_seed;
    j["traj_seed"] = s.traj_seed;
    j["jaw_ref_angle"] = s.jaw_ref_angle;
    j["pose_amp"] = s.pose_amp;
    j["jaw_amp"] = s.jaw_amp;
    j["psi_amp"] = s.psi_amp;
    j["spp"] = s.spp;
    j["mc_seed"] = s.mc_seed;
    for (const RegionMaterial& m : s.materials)
        j["materials"].push_back({m.rho.x, m.rho.y, m.rho.z, m.rough, m.spec});
    return j;
}

inline SceneConfig scene_from_json(const nlohmann::json& j) {
    SceneConfig s;
    s.type = j.at("type").get<std::string>();
    s.icosphere_subdiv = j.at("icosphere_subdiv").get<int>();
    s.radius = j.at("radius").get<double>();
    s.bump_amplitude = j.at("bump_amplitude").get<double>();
    s.bump_freq = j.value("bump_freq", s.bump_freq);
    s.shape_seed = j.at("shape_seed").get<uint64_t>();
    s.frames = j.at("frames").get<int>();
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.fov_deg = j.at("fov_deg").get<double>();
    s.cam_distance = j.at("cam_distance").get<double>();
    s.env_width = j.at("env_width").get<int>();
    s.env_height = j.at("env_height").get<int>();
    s.env_blobs = j.at("env_blobs").get<int>();
    s.env_seed = j.at("env_seed").get<uint64_t>();
    s.n_j = j.at("n_j").get<int>();
    s.n_e = j.at("n_e").get<int>();
    s.rig_seed = j.at("rig_seed").get<uint64_t>();
    s.traj_seed = j.at("traj_seed").get<uint64_t>();
    s.jaw_ref_angle = j.at("jaw_ref_angle").get<double>();
    s.pose_amp = j.at("pose_amp").get<double>();
    s.jaw_amp = j.at("jaw_amp").get<double>();
    s.psi_amp = j.at("psi_amp").get<double>();
    s.spp = j.at("spp").get<int>();
    s.mc_seed = j.at("mc_seed").get<uint64_t>();
    s.materials.clear();
    for (const auto& m : j.at("materials"))
        s.materials.push_back({{m.at(0).get<double>(), m.at(1).get<double>(), m.at(2).get<double>()},
                               m.at(3).get<double>(),
                               m.at(4).get<double>()});
    return s;
}

} // namespace detail

// Rig over the smooth authoring template, with nearest-vertex queries
// answered at the jaw-open start positions so base-resolution pseudo ground
// truth is exact per index at the optimization start.
inline DeformationRig scene_rig(const SceneConfig& cfg, const TriMesh& template_mesh,
                                const TriMesh& init_mesh) {
    DeformationRig rig = make_rig(template_mesh.vertices, cfg.n_j, cfg.n_e, cfg.rig_seed,
                                  cfg.type == "head", cfg.jaw_ref_angle);
    rig.template_verts = init_mesh.vertices;
    return rig;
}

inline Dataset gen_synthetic(const SceneConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir + "/frames", ec);
    if (ec || !fs::exists(out_dir + "/frames"))
        throw std::runtime_error("gen_synthetic: cannot create output dir " + out_dir);

    Dataset ds;
    ds.root = out_dir;
    ds.scene = cfg;
    ds.template_mesh = make_scene_template(cfg);
    DeformationRig rig0 = make_rig(ds.template_mesh.vertices, cfg.n_j, cfg.n_e, cfg.rig_seed,
                                   cfg.type == "head", cfg.jaw_ref_angle);
    TriMesh subject = apply_scene_bumps(cfg, ds.template_mesh);
    ds.init_mesh = jaw_open_remap(ds.template_mesh, rig0);
    ds.canonical = jaw_open_remap(subject, rig0);
    ds.rig = rig0;
    ds.rig.template_verts = ds.init_mesh.vertices;
    ds.env = make_env_procedural(cfg.env_width, cfg.env_height, cfg.env_seed, cfg.env_blobs);
    ds.camera = scene_camera(cfg);

    save_obj(out_dir + "/template.obj", ds.template_mesh);
    save_obj(out_dir + "/init.obj", ds.init_mesh);
    save_obj(out_dir + "/canonical.obj", ds.canonical);
    save_envmap(out_dir + "/env.pfm", ds.env);

    MaterialFn matfn = scene_material_fn(cfg);
    nlohmann::json man;
    man["scene"] = detail::scene_to_json(cfg);
    man["template"] = "template.obj";
    man["init"] = "init.obj";
    man["canonical"] = "canonical.obj";
    man["env"] = "env.pfm";
    for (int i = 0; i < cfg.frames; ++i) {
        FrameRecord fr;
        fr.pose = pose_for_frame(cfg, ds.rig, i);
        fr.test = (i % 5) == 4;
        char img[64], msk[64];
        std::snprintf(img, sizeof(img), "frames/frame_%03d.pfm", i);
        std::snprintf(msk, sizeof(msk), "frames/mask_%03d.pfm", i);
        fr.image_path = img;
        fr.mask_path = msk;
        std::vector<Vec3> deformed =
            lbs_deform(ds.canonical.vertices, ds.rig.template_fields, ds.rig, fr.pose);
        RenderOutput ro = reference_render(ds.camera, deformed, ds.canonical.vertices,
                                           ds.canonical.faces, ds.canonical.region_labels, ds.env,
                                           matfn, cfg.spp, hash_combine(cfg.mc_seed, uint64_t(i)));
        write_pfm(out_dir + "/" + fr.image_path, ro.rgb);
        write_pfm(out_dir + "/" + fr.mask_path, ro.mask);
        nlohmann::json jf = detail::pose_to_json(fr.pose);
        jf["image"] = fr.image_path;
        jf["mask"] = fr.mask_path;
        jf["test"] = fr.test;
        man["frames"].push_back(jf);
        ds.frames.push_back(std::move(fr));
    }
    std::ofstream out(out_dir + "/scene.json");
    out << man.dump(1) << "\n";
    if (!out) throw std::runtime_error("gen_synthetic: cannot write scene.json");
    return ds;
}

inline Dataset load_dataset(const std::string& dir) {
    std::ifstream in(dir + "/scene.json");
    if (!in) throw std::runtime_error("load_dataset: missing " + dir + "/scene.json");
    nlohmann::json man = nlohmann::json::parse(in);
    Dataset ds;
    ds.root = dir;
    ds.scene = detail::scene_from_json(man.at("scene"));
    ds.template_mesh = load_obj(dir + "/" + man.at("template").get<std::string>());
    ds.init_mesh = load_obj(dir + "/" + man.at("init").get<std::string>());
    ds.canonical = load_obj(dir + "/" + man.at("canonical").get<std::string>());
    ds.rig = scene_rig(ds.scene, ds.template_mesh, ds.init_mesh);
    ds.env = load_envmap(dir + "/" + man.at("env").get<std::string>());
    ds.camera = scene_camera(ds.scene);
    for (const auto& jf : man.at("frames")) {
        FrameRecord fr;
        fr.pose = detail::pose_from_json(jf);
        fr.image_path = jf.at("image").get<std::string>();
        fr.mask_path = jf.at("mask").get<std::string>();
        fr.test = jf.at("test").get<bool>();
        ds.frames.push_back(std::move(fr));
    }
    return ds;
}

} // namespace af
