// Command-line front end: dataset generation, LUT baking, env prefiltering,
// light fitting, two-stage training, rendering, relighting, and metrics.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "af/core/thread.hpp"
#include "af/core/toml.hpp"
#include "af/light/fit.hpp"
#include "af/pbr/fglut.hpp"
#include "af/pbr/prefilter.hpp"
#include "af/pbr/tonemap.hpp"
#include "af/train/scene.hpp"
#include "af/train/trainer.hpp"

namespace {

af::Toml load_config(const std::string& path) {
    if (path.empty()) return af::Toml{};
    return af::Toml::parse_file(path);
}

std::vector<int> frame_selection(const af::Dataset& ds, int frame, const std::string& split) {
    std::vector<int> out;
    if (frame >= 0) {
        if (frame >= int(ds.frames.size()))
            throw std::runtime_error("frame index out of range: " + std::to_string(frame));
        out.push_back(frame);
    } else if (split == "test") {
        out = ds.test_indices();
    } else if (split == "train") {
        out = ds.train_indices();
    } else {
        for (int i = 0; i < int(ds.frames.size()); ++i) out.push_back(i);
    }
    return out;
}

void write_renders(af::TrainedAssets& assets, const af::Dataset& ds, const std::vector<int>& which,
                   const af::PrefilteredEnv* lut, const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    af::TopoMaps maps = af::build_topo_maps(assets.mesh);
    for (int fi : which) {
        af::AvatarRender r =
            af::render_avatar_frame(assets, maps, ds.frames[fi].pose, ds.camera, lut);
        char name[64];
        std::snprintf(name, sizeof(name), "/render_%03d.pfm", fi);
        af::write_pfm(out_dir + name, r.rgb);
        std::snprintf(name, sizeof(name), "/render_%03d.png", fi);
        af::write_display_png(out_dir + name, r.rgb);
        std::snprintf(name, sizeof(name), "/mask_%03d.pfm", fi);
        af::write_pfm(out_dir + name, r.mask);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"relightable head avatars from posed frames"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    app.add_option("--config", config_path, "TOML config file")->expected(1);
    app.add_option("--seed", seed, "seed override")->each([&](const std::string&) { seed_set = true; });
    app.add_option("--out", out_dir, "output path");
    app.add_option("--threads", threads, "worker threads (0 = hardware)");

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic dataset");
    std::string scene_type;
    gen->add_option("--scene", scene_type, "scene type: head | sphere");

    // bake-fg-lut
    auto* bake = app.add_subcommand("bake-fg-lut", "bake the BRDF integration table");
    int fg_rows = 64, fg_cols = 64, fg_samples = 4096;
    bake->add_option("--rows", fg_rows);
    bake->add_option("--cols", fg_cols);
    bake->add_option("--samples", fg_samples);

    // prefilter-env
    auto* pre = app.add_subcommand("prefilter-env", "prefilter an environment map");
    std::string env_path;
    int pf_samples = 512;
    pre->add_option("--env", env_path, "environment map (.pfm or .hdr)")->required();
    pre->add_option("--samples", pf_samples);

    // fit-light
    auto* fitl = app.add_subcommand("fit-light", "fit the neural light to a prefiltered env");
    int fl_iters = 1500, fl_batch = 512, fl_eval = 10000;
    fitl->add_option("--env", env_path, "environment map (.pfm or .hdr)");
    fitl->add_option("--iters", fl_iters);
    fitl->add_option("--batch", fl_batch);
    fitl->add_option("--eval-pairs", fl_eval);

    // train
    auto* tr = app.add_subcommand("train", "run the two-stage optimization");
    std::string data_dir;
    tr->add_option("--data", data_dir, "dataset directory")->required();

    // render
    auto* ren = app.add_subcommand("render", "render frames from trained assets");
    std::string assets_dir, light_mode = "neural", split = "all";
    int frame = -1;
    ren->add_option("--assets", assets_dir)->required();
    ren->add_option("--data", data_dir, "dataset directory (poses + camera)")->required();
    ren->add_option("--light", light_mode, "neural | lut");
    ren->add_option("--env", env_path, "env for --light lut (default: dataset env)");
    ren->add_option("--frame", frame, "single frame index");
    ren->add_option("--split", split, "all | train | test");

    // relight
    auto* rel = app.add_subcommand("relight", "render under a new environment");
    rel->add_option("--assets", assets_dir)->required();
    rel->add_option("--data", data_dir)->required();
    rel->add_option("--env", env_path, "new environment map")->required();
    rel->add_option("--frame", frame, "single frame index");
    rel->add_option("--split", split, "all | train | test");

    // metrics
    auto* met = app.add_subcommand("metrics", "masked L1/PSNR/SSIM between two images");
    std::string pred_path, gt_path, mask_path;
    bool raw_linear = false;
    met->add_option("--pred", pred_path)->required();
    met->add_option("--gt", gt_path)->required();
    met->add_option("--mask", mask_path)->required();
    met->add_flag("--linear", raw_linear, "compare linear values (default: display space)");

    // eval-normals
    auto* evn = app.add_subcommand("eval-normals", "normal cosine similarity against GT surface");
    evn->add_option("--assets", assets_dir)->required();
    evn->add_option("--data", data_dir)->required();
    evn->add_option("--split", split, "all | train | test");

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) af::set_threads(threads);

    try {
        af::Toml cfg = load_config(config_path);

        if (gen->parsed()) {
            if (out_dir.empty()) throw std::runtime_error("gen-synthetic needs --out");
            af::SceneConfig sc;
            if (!config_path.empty()) {
                sc = af::scene_from_toml(cfg);
                if (!scene_type.empty()) sc.type = scene_type;
            } else {
                sc = scene_type == "sphere" ? af::SceneConfig::sphere_default() : af::SceneConfig{};
            }
            if (seed_set) {
                sc.shape_seed = af::hash_combine(seed, 1);
                sc.env_seed = af::hash_combine(seed, 2);
                sc.traj_seed = af::hash_combine(seed, 3);
                sc.rig_seed = af::hash_combine(seed, 4);
                sc.mc_seed = af::hash_combine(seed, 5);
            }
            af::gen_synthetic(sc, out_dir);
            std::printf("dataset written to %s (%d frames)\n", out_dir.c_str(), sc.frames);
        } else if (bake->parsed()) {
            if (out_dir.empty()) throw std::runtime_error("bake-fg-lut needs --out");
            af::nn::FgTable t = af::bake_fg_lut(fg_rows, fg_cols, fg_samples);
            af::save_fg_lut(out_dir, t);
            std::printf("fg lut %dx%d written to %s\n", fg_rows, fg_cols, out_dir.c_str());
        } else if (pre->parsed()) {
            if (out_dir.empty()) throw std::runtime_error("prefilter-env needs --out");
            af::EnvMap env = af::load_envmap(env_path);
            af::PrefilteredEnv pf = af::prefilter_env(env, pf_samples);
            af::save_prefiltered(out_dir, pf);
            std::printf("prefiltered %d levels to %s\n", af::kPrefilterLevels, out_dir.c_str());
        } else if (fitl->parsed()) {
            if (out_dir.empty()) throw std::runtime_error("fit-light needs --out");
            if (env_path.empty()) throw std::runtime_error("fit-light needs --env");
            af::EnvMap env = af::load_envmap(env_path);
            af::PrefilteredEnv pf = af::prefilter_env(env, pf_samples);
            af::nn::Mlp net = af::make_light_net(seed_set ? seed : 7);
            af::fit_light(net, pf, fl_iters, fl_batch, 1e-3, seed_set ? seed : 99, stdout);
            double rel = af::eval_light_rel_l2(net, pf, fl_eval, af::hash_combine(seed_set ? seed : 99, 77));
            std::error_code ec;
            std::filesystem::create_directories(out_dir, ec);
            std::map<std::string, af::nn::Tensor> t;
            af::nn::collect_mlp(t, net, "light.");
            af::nn::save_tensors(out_dir + "/light.flrw", t);
            std::printf("held-out relative L2: %.4f\n", rel);
        } else if (tr->parsed()) {
            if (out_dir.empty()) throw std::runtime_error("train needs --out");
            af::Dataset ds = af::load_dataset(data_dir);
            af::TrainConfig tc = af::train_from_toml(cfg);
            if (seed_set) tc.seed = seed;
            af::TrainResult res = af::train_avatar(ds, tc, out_dir);
            af::save_assets(res.assets, out_dir + "/assets");
            std::printf("stage1 test: psnr %.3f ssim %.4f l1 %.5f normal_cos %.5f\n",
                        res.stage1_test.psnr, res.stage1_test.ssim, res.stage1_test.l1,
                        res.stage1_test.normal_cos);
            if (tc.stage2_iters > 0)
                std::printf("stage2 test: psnr %.3f ssim %.4f l1 %.5f normal_cos %.5f\n",
                            res.stage2_test.psnr, res.stage2_test.ssim, res.stage2_test.l1,
                            res.stage2_test.normal_cos);
            if (res.aborted) std::printf("warning: training aborted early; last snapshot kept\n");
        } else if (ren->parsed() || rel->parsed()) {
            if (out_dir.empty()) throw std::runtime_error("render needs --out");
            af::Dataset ds = af::load_dataset(data_dir);
            af::TrainedAssets assets = af::load_assets(assets_dir);
            std::vector<int> which = frame_selection(ds, frame, split);
            bool use_lut = rel->parsed() || light_mode == "lut";
            if (use_lut) {
                af::EnvMap env = env_path.empty() ? ds.env : af::load_envmap(env_path);
                af::PrefilteredEnv pf = af::prefilter_env(env);
                write_renders(assets, ds, which, &pf, out_dir);
            } else {
                write_renders(assets, ds, which, nullptr, out_dir);
            }
            std::printf("%zu frames written to %s\n", which.size(), out_dir.c_str());
        } else if (met->parsed()) {
            af::Image pred = af::read_pfm(pred_path);
            af::Image gt = af::read_pfm(gt_path);
            af::Image mask = af::read_pfm(mask_path);
            af::MetricsResult m =
                raw_linear ? af::compute_metrics(pred, gt, mask)
                           : af::compute_metrics(af::tonemap_image(pred), af::tonemap_image(gt), mask);
            if (!m.defined) {
                std::printf("l1,psnr,ssim\nabsent,absent,absent\n");
            } else {
                std::printf("l1,psnr,ssim\n%.6g,%.6g,%.6g\n", m.l1, m.psnr, m.ssim);
            }
            if (!out_dir.empty()) {
                FILE* f = std::fopen(out_dir.c_str(), "w");
                if (!f) throw std::runtime_error("cannot write " + out_dir);
                if (m.defined)
                    std::fprintf(f, "l1,psnr,ssim\n%.10g,%.10g,%.10g\n", m.l1, m.psnr, m.ssim);
                else
                    std::fprintf(f, "l1,psnr,ssim\nabsent,absent,absent\n");
                std::fclose(f);
            }
        } else if (evn->parsed()) {
            af::Dataset ds = af::load_dataset(data_dir);
            af::TrainedAssets assets = af::load_assets(assets_dir);
            af::SplitEval ev = af::eval_split(assets, ds, split != "train");
            std::printf("normal_cos %.6f over %s split\n", ev.normal_cos, split.c_str());
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
