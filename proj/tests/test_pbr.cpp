#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include "af/light/envmap.hpp"
#include "af/pbr/brdf.hpp"
#include "af/pbr/fglut.hpp"
#include "af/pbr/prefilter.hpp"
#include "af/pbr/reference.hpp"
#include "af/pbr/shade.hpp"
#include "af/pbr/tonemap.hpp"

using namespace af;

namespace {

EnvMap const_env(int w, int h, Vec3 c) {
    EnvMap e;
    e.img = Image(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) e.img.at(x, y, ch) = float(c[ch]);
    return e;
}

std::filesystem::path temp_dir(const char* tag) {
    auto p = std::filesystem::temp_directory_path() / (std::string("af_pbr_") + tag);
    std::filesystem::create_directories(p);
    return p;
}

double median(std::vector<double> v) {
    REQUIRE_FALSE(v.empty());
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
}

} // namespace

TEST_CASE("ggx at roughness one is the cosine lobe 1/pi") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        double nh = uni(rng);
        REQUIRE(ggx_ndf(nh, 1.0) == Catch::Approx(1.0 / kPi).margin(1e-12));
    }
    REQUIRE(ggx_ndf(1.0, 1.0) == Catch::Approx(1.0 / kPi).margin(1e-12));
    REQUIRE(ggx_ndf(0.0, 1.0) == Catch::Approx(1.0 / kPi).margin(1e-12));
}

TEST_CASE("ggx integrates to one against the projected solid angle") {
    // Integrate D(n.h) cos(theta) over the hemisphere with a theta x phi grid.
    for (double rough : {0.2, 0.5, 1.0}) {
        const int nt = 4096;
        double acc = 0.0;
        for (int i = 0; i < nt; ++i) {
            double th = (i + 0.5) / nt * (kPi / 2.0);
            acc += ggx_ndf(std::cos(th), rough) * std::cos(th) * std::sin(th) * (kPi / 2.0 / nt);
        }
        acc *= 2.0 * kPi;
        REQUIRE(acc == Catch::Approx(1.0).epsilon(2e-3));
    }
}

TEST_CASE("ggx peaks at the normal and falls off monotonically") {
    double prev = ggx_ndf(1.0, 0.3);
    for (int i = 1; i <= 20; ++i) {
        double cur = ggx_ndf(1.0 - i * 0.05, 0.3);
        REQUIRE(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("fresnel schlick hits both endpoints") {
    for (double f0 : {0.028, 0.047, 0.5}) {
        REQUIRE(fresnel_schlick(1.0, f0) == Catch::Approx(f0).margin(1e-15));
        REQUIRE(fresnel_schlick(0.0, f0) == Catch::Approx(1.0).margin(1e-15));
        for (double c : {0.1, 0.4, 0.7}) {
            double f = fresnel_schlick(c, f0);
            REQUIRE(f >= f0 - 1e-15);
            REQUIRE(f <= 1.0 + 1e-15);
        }
    }
}

TEST_CASE("smith term stays in (0, 1] and is 1 for aligned smooth surfaces") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(0.01, 1.0);
    for (int i = 0; i < 200; ++i) {
        double g = smith_g(uni(rng), uni(rng), uni(rng));
        REQUIRE(g > 0.0);
        REQUIRE(g <= 1.0 + 1e-12);
    }
    REQUIRE(smith_g(1.0, 1.0, kRoughnessMin) == Catch::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("reflection about the normal is an involution that preserves angle") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss;
    for (int i = 0; i < 50; ++i) {
        Vec3 n = normalized({gauss(rng), gauss(rng), gauss(rng)});
        Vec3 w = normalized({gauss(rng), gauss(rng), gauss(rng)});
        if (dot(w, n) < 0.0) w = -1.0 * w;
        Vec3 r = reflect_about(w, n);
        REQUIRE(norm(r) == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(dot(r, n) == Catch::Approx(dot(w, n)).margin(1e-12));
        Vec3 back = reflect_about(r, n);
        for (int c = 0; c < 3; ++c) REQUIRE(back[c] == Catch::Approx(w[c]).margin(1e-12));
    }
}

TEST_CASE("region labels select the dielectric f0") {
    REQUIRE(kRegionOther == 0);
    REQUIRE(kRegionSkin == 1);
    REQUIRE(f0_for_region(kRegionOther) == 0.047);
    REQUIRE(f0_for_region(kRegionSkin) == 0.028);
    REQUIRE(f0_for_region(99) == 0.047);
}

TEST_CASE("pixel region picks the label of the dominant corner") {
    GBuffer gb;
    gb.face = {0};
    gb.bary = {0.2, 0.5, 0.3};
    std::vector<std::array<int, 3>> faces = {{4, 7, 9}};
    std::vector<int> labels(10, kRegionOther);
    labels[7] = kRegionSkin;
    REQUIRE(pixel_region(gb, faces, labels, 0) == kRegionSkin);
    gb.bary = {0.4, 0.4, 0.2}; // tie picks the lowest slot
    REQUIRE(pixel_region(gb, faces, labels, 0) == kRegionOther);
    REQUIRE(pixel_region(gb, faces, {}, 0) == kRegionOther);
    gb.face = {-1};
    REQUIRE(pixel_region(gb, faces, labels, 0) == kRegionOther);
}

TEST_CASE("fg bake cells agree with an independent estimator") {
    nn::FgTable t = bake_fg_lut(16, 16, 2048);
    for (auto [i, j] : {std::pair{1, 8}, {4, 3}, {8, 12}, {12, 6}, {15, 15}}) {
        double rough = (i + 0.5) / 16.0;
        double cv = (j + 0.5) / 16.0;
        double s, b;
        fg_reference_cell(rough, cv, 400000, 1234 + i * 16 + j, s, b);
        REQUIRE(t.scale[size_t(i) * 16 + j] == Catch::Approx(s).margin(1e-2));
        REQUIRE(t.bias[size_t(i) * 16 + j] == Catch::Approx(b).margin(1e-2));
    }
}

TEST_CASE("fg bake respects the energy bound and stays nonnegative") {
    nn::FgTable t = bake_fg_lut(16, 16, 1024);
    for (size_t i = 0; i < t.scale.size(); ++i) {
        REQUIRE(t.scale[i] >= -1e-6);
        REQUIRE(t.bias[i] >= -1e-6);
        REQUIRE(t.scale[i] + t.bias[i] <= 1.0 + 1e-2);
    }
    REQUIRE_THROWS(bake_fg_lut(0, 16, 128));
}

TEST_CASE("fg lut files round trip") {
    nn::FgTable t = bake_fg_lut(8, 8, 512);
    auto dir = temp_dir("fg");
    std::string path = (dir / "fg.lut").string();
    save_fg_lut(path, t);
    nn::FgTable u = load_fg_lut(path);
    REQUIRE(u.rows == t.rows);
    REQUIRE(u.cols == t.cols);
    for (size_t i = 0; i < t.scale.size(); ++i) {
        REQUIRE(u.scale[i] == Catch::Approx(t.scale[i]).margin(1e-7));
        REQUIRE(u.bias[i] == Catch::Approx(t.bias[i]).margin(1e-7));
    }
    std::string bogus = (dir / "bogus.lut").string();
    FILE* f = std::fopen(bogus.c_str(), "wb");
    std::fwrite("NOPE", 1, 4, f);
    std::fclose(f);
    REQUIRE_THROWS(load_fg_lut(bogus));
}

TEST_CASE("diffuse furnace: unit environment and unit albedo return one") {
    EnvMap env = const_env(16, 8, {1, 1, 1});
    MaterialSample m;
    m.rho = {1, 1, 1};
    m.spec = 0.0;
    m.rough = 0.5;
    Vec3 n{0, 0, 1};
    Vec3 v = normalized({0.3, 0.1, 0.9});
    Vec3 c = reference_shade(n, v, m, kF0Default, env, 512, 9);
    for (int ch = 0; ch < 3; ++ch) REQUIRE(c[ch] == Catch::Approx(1.0).margin(1e-6));

    nn::FgTable fg = bake_fg_lut(16, 16, 1024);
    auto unit_light = [](Vec3, double) { return Vec3{1, 1, 1}; };
    Vec3 s = shade_splitsum_scalar(n, v, m, kF0Default, unit_light, fg);
    for (int ch = 0; ch < 3; ++ch) REQUIRE(s[ch] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("specular furnace: split sum equals the sampled estimator on a unit environment") {
    EnvMap env = const_env(16, 8, {1, 1, 1});
    nn::FgTable fg = bake_fg_lut(32, 32, 4096);
    auto unit_light = [](Vec3, double) { return Vec3{1, 1, 1}; };
    for (double rough : {0.1, 0.4, 0.8}) {
        for (double cv : {0.35, 0.75, 0.95}) {
            MaterialSample m;
            m.rho = {0, 0, 0};
            m.spec = 1.0;
            m.rough = rough;
            Vec3 n{0, 0, 1};
            double sv = std::sqrt(1.0 - cv * cv);
            Vec3 v{sv, 0.0, cv};
            Vec3 ref = reference_shade(n, v, m, 1.0, env, 16384, 77);
            Vec3 ss = shade_splitsum_scalar(n, v, m, 1.0, unit_light, fg);
            REQUIRE(ss.x == Catch::Approx(ref.x).margin(0.02));
            REQUIRE(ss.x <= 1.0 + 1e-2); // single-scatter white furnace never gains energy
            REQUIRE(ss.x >= 0.3);
        }
    }
}

TEST_CASE("lambertian surface under constant light reproduces albedo times radiance") {
    Vec3 c{0.8, 0.6, 0.4};
    EnvMap env = const_env(16, 8, c);
    MaterialSample m;
    m.rho = {0.25, 0.5, 0.75};
    m.spec = 0.0;
    Vec3 n = normalized({0.2, -0.4, 0.89});
    Vec3 v = n;
    Vec3 r = reference_shade(n, v, m, kF0Default, env, 256, 13);
    PrefilteredEnv pf = prefilter_env(env, 64);
    auto light = [&](Vec3 d, double rough) { return prefiltered_lookup(pf, d, rough); };
    nn::FgTable fg = bake_fg_lut(8, 8, 256);
    Vec3 s = shade_splitsum_scalar(n, v, m, kF0Default, light, fg);
    for (int ch = 0; ch < 3; ++ch) {
        double want = m.rho[ch] * double(float(c[ch]));
        REQUIRE(r[ch] == Catch::Approx(want).margin(1e-6));
        REQUIRE(s[ch] == Catch::Approx(want).margin(1e-6));
    }
}

TEST_CASE("prefiltering a constant environment is the identity at every level") {
    Vec3 c{0.3, 0.9, 1.7};
    EnvMap env = const_env(16, 8, c);
    PrefilteredEnv pf = prefilter_env(env, 128);
    REQUIRE(int(pf.levels.size()) == kPrefilterLevels);
    for (const Image& lev : pf.levels) {
        for (int y = 0; y < lev.h; ++y)
            for (int x = 0; x < lev.w; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    REQUIRE(double(lev.at(x, y, ch)) == Catch::Approx(c[ch]).margin(1e-3));
    }
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss;
    for (int i = 0; i < 32; ++i) {
        Vec3 d = normalized({gauss(rng), gauss(rng), gauss(rng)});
        double rough = 0.04 + 0.96 * std::uniform_real_distribution<double>(0, 1)(rng);
        Vec3 got = prefiltered_lookup(pf, d, rough);
        for (int ch = 0; ch < 3; ++ch) REQUIRE(got[ch] == Catch::Approx(c[ch]).margin(1e-3));
    }
}

TEST_CASE("sharpest prefilter level tracks the raw environment") {
    EnvMap env = make_env_procedural(64, 32, 21);
    PrefilteredEnv pf = prefilter_env(env, 512);
    std::vector<double> rel;
    for (int y = 0; y < env.height(); ++y) {
        for (int x = 0; x < env.width(); ++x) {
            Vec3 d = env_texel_dir(env, x, y);
            Vec3 a = prefiltered_lookup(pf, d, kRoughnessMin);
            Vec3 b = env_lookup(env, d);
            double na = (a.x + a.y + a.z) / 3.0, nb = (b.x + b.y + b.z) / 3.0;
            rel.push_back(std::abs(na - nb) / std::max(1e-9, nb));
        }
    }
    REQUIRE(median(rel) < 0.02);

    // The mirror limit keeps the brightest spot where the environment has it.
    auto argmax_dir = [&](const Image& im) {
        int bx = 0, by = 0;
        double best = -1.0;
        for (int y = 0; y < im.h; ++y)
            for (int x = 0; x < im.w; ++x) {
                double m = im.at(x, y, 0) + im.at(x, y, 1) + im.at(x, y, 2);
                if (m > best) {
                    best = m;
                    bx = x;
                    by = y;
                }
            }
        return env_uv_to_dir((bx + 0.5) / im.w, (by + 0.5) / im.h);
    };
    Vec3 de = argmax_dir(env.img);
    Vec3 dp = argmax_dir(pf.levels[0]);
    REQUIRE(dot(de, dp) > std::cos(3.0 * kPi / 32.0));
}

TEST_CASE("prefilter levels blend linearly in the lookup") {
    PrefilteredEnv pf;
    pf.levels.resize(kPrefilterLevels);
    for (int lev = 0; lev < kPrefilterLevels; ++lev) {
        pf.levels[lev] = Image(4, 2, 3);
        for (auto& v : pf.levels[lev].data) v = float(lev);
    }
    Vec3 d = normalized({0.3, 0.5, 0.6});
    REQUIRE(prefiltered_lookup(pf, d, 0.04).x == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(prefiltered_lookup(pf, d, 1.0).x == Catch::Approx(5.0).margin(1e-12));
    REQUIRE(prefiltered_lookup(pf, d, 0.5).x == Catch::Approx(2.5).margin(1e-12));
    REQUIRE(prefiltered_lookup(pf, d, 0.9).x == Catch::Approx(4.5).margin(1e-12));
    REQUIRE(prefiltered_lookup(pf, d, 0.0).x == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(prefiltered_lookup(pf, d, 1.5).x == Catch::Approx(5.0).margin(1e-12));
    // Interior roughness between the first two levels.
    double r = 0.5 * (0.04 + 0.2);
    REQUIRE(prefiltered_lookup(pf, d, r).x == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("prefiltered stacks round trip through pfm files") {
    EnvMap env = make_env_procedural(16, 8, 3);
    PrefilteredEnv pf = prefilter_env(env, 64);
    auto dir = temp_dir("pfstack");
    save_prefiltered(dir.string(), pf);
    PrefilteredEnv back = load_prefiltered(dir.string());
    REQUIRE(back.levels.size() == pf.levels.size());
    for (int lev = 0; lev < kPrefilterLevels; ++lev)
        for (size_t i = 0; i < pf.levels[lev].data.size(); ++i)
            REQUIRE(back.levels[lev].data[i] == pf.levels[lev].data[i]);
}

TEST_CASE("split sum tracks the sampled reference on a structured environment") {
    EnvMap env = make_env_procedural(64, 32, 33);
    PrefilteredEnv pf = prefilter_env(env, 512);
    nn::FgTable fg = bake_fg_lut(32, 32, 2048);
    auto light = [&](Vec3 d, double rough) { return prefiltered_lookup(pf, d, rough); };
    Vec3 n{0, 0, 1};
    for (double rough : {0.2, 0.5}) {
        MaterialSample m;
        m.rho = {0.5, 0.4, 0.3};
        m.rough = rough;
        m.spec = 0.7;
        Vec3 v = normalized({0.5, 0.0, 0.866});
        Vec3 ref = reference_shade(n, v, m, kF0Default, env, 16384, 101);
        Vec3 ss = shade_splitsum_scalar(n, v, m, kF0Default, light, fg);
        for (int ch = 0; ch < 3; ++ch)
            REQUIRE(std::abs(ss[ch] - ref[ch]) / std::max(1e-6, ref[ch]) < 0.15);
    }
}

TEST_CASE("backfacing view shades to black") {
    EnvMap env = const_env(8, 4, {1, 1, 1});
    MaterialSample m;
    Vec3 n{0, 0, 1};
    Vec3 v{0, 0, -1};
    Vec3 c = reference_shade(n, v, m, kF0Default, env, 16, 1);
    REQUIRE(c.x == 0.0);
    nn::FgTable fg = bake_fg_lut(8, 8, 256);
    auto unit_light = [](Vec3, double) { return Vec3{1, 1, 1}; };
    Vec3 s = shade_splitsum_scalar(n, v, m, kF0Default, unit_light, fg);
    REQUIRE(s.x == 0.0);
}

TEST_CASE("environment texel solid angles tile the sphere") {
    EnvMap env = const_env(32, 16, {1, 1, 1});
    double acc = 0.0;
    for (int y = 0; y < env.height(); ++y) acc += env_texel_solid_angle(env, y) * env.width();
    REQUIRE(acc == Catch::Approx(4.0 * kPi).epsilon(1e-3));
}

TEST_CASE("procedural environments are positive, unit mean, and seeded") {
    EnvMap a = make_env_procedural(32, 16, 5);
    EnvMap b = make_env_procedural(32, 16, 5);
    EnvMap c = make_env_procedural(32, 16, 6);
    REQUIRE(a.img.data == b.img.data);
    REQUIRE(a.img.data != c.img.data);
    for (float v : a.img.data) REQUIRE(v > 0.0f);
    REQUIRE(env_mean(a) == Catch::Approx(1.0).margin(1e-5));
}

TEST_CASE("azimuth rotation rolls texels exactly and inverts") {
    EnvMap e = make_env_procedural(16, 8, 9);
    EnvMap r = rotate_env_azimuth(e, 5);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 16; ++x)
            for (int ch = 0; ch < 3; ++ch)
                REQUIRE(r.img.at((x + 5) % 16, y, ch) == e.img.at(x, y, ch));
    EnvMap back = rotate_env_azimuth(r, -5);
    REQUIRE(back.img.data == e.img.data);
    EnvMap full = rotate_env_azimuth(e, 16);
    REQUIRE(full.img.data == e.img.data);
}

TEST_CASE("rotated environments match lookups in rotated directions") {
    EnvMap e = make_env_procedural(32, 16, 12);
    int shift = 7;
    EnvMap r = rotate_env_azimuth(e, shift);
    double dphi = 2.0 * kPi * shift / 32.0;
    for (int y = 2; y < 14; y += 3) {
        for (int x = 0; x < 32; x += 5) {
            Vec3 d = env_texel_dir(e, x, y);
            Vec3 dr{d.x * std::cos(dphi) - d.y * std::sin(dphi),
                    d.x * std::sin(dphi) + d.y * std::cos(dphi), d.z};
            Vec3 a = env_lookup(e, d);
            Vec3 b = env_lookup(r, dr);
            for (int ch = 0; ch < 3; ++ch) REQUIRE(b[ch] == Catch::Approx(a[ch]).margin(1e-5));
        }
    }
}

TEST_CASE("environment validation rejects bad maps") {
    EnvMap tiny = const_env(1, 1, {1, 1, 1});
    REQUIRE_THROWS(validate_env(tiny, "test"));
    EnvMap neg = const_env(4, 4, {1, 1, 1});
    neg.img.at(0, 0, 0) = -0.5f;
    REQUIRE_THROWS(validate_env(neg, "test"));
}

TEST_CASE("pfm files round trip bit-exactly") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<float> uni(0.0f, 10.0f);
    auto dir = temp_dir("pfm");
    for (int c : {1, 3}) {
        Image img(7, 5, c);
        for (auto& v : img.data) v = uni(rng);
        std::string path = (dir / ("img" + std::to_string(c) + ".pfm")).string();
        write_pfm(path, img);
        Image back = read_pfm(path);
        REQUIRE(back.w == img.w);
        REQUIRE(back.h == img.h);
        REQUIRE(back.c == img.c);
        REQUIRE(back.data == img.data);
    }
    Image two(4, 4, 2);
    REQUIRE_THROWS(write_pfm((dir / "two.pfm").string(), two));
    REQUIRE_THROWS(read_pfm((dir / "missing.pfm").string()));
}

TEST_CASE("radiance hdr files decode flat scanlines") {
    auto dir = temp_dir("hdr");
    std::string path = (dir / "flat.hdr").string();
    FILE* f = std::fopen(path.c_str(), "wb");
    std::fprintf(f, "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 2 +X 2\n");
    // RGBE with e = 136 scales mantissas by one: pixel = (r, g, b).
    const uint8_t px[4][4] = {{128, 0, 0, 136}, {0, 128, 0, 136}, {0, 0, 128, 136}, {64, 64, 64, 136}};
    for (const auto& p : px) std::fwrite(p, 1, 4, f);
    std::fclose(f);
    Image img = read_hdr(path);
    REQUIRE(img.w == 2);
    REQUIRE(img.h == 2);
    REQUIRE(img.at(0, 0, 0) == 128.0f);
    REQUIRE(img.at(0, 0, 1) == 0.0f);
    REQUIRE(img.at(1, 0, 1) == 128.0f);
    REQUIRE(img.at(0, 1, 2) == 128.0f);
    REQUIRE(img.at(1, 1, 0) == 64.0f);
    EnvMap env = load_envmap(path);
    REQUIRE(env.width() == 2);
}

TEST_CASE("srgb transfer inverts and is continuous at the breakpoint") {
    for (double y : {0.0, 0.01, 0.04045, 0.2, 0.5, 0.9, 1.0}) {
        REQUIRE(linear_to_srgb(srgb_to_linear(y)) == Catch::Approx(y).margin(1e-12));
    }
    double lo = linear_to_srgb(0.0031308 - 1e-9);
    double hi = linear_to_srgb(0.0031308 + 1e-9);
    REQUIRE(hi - lo < 1e-6);
    REQUIRE(tonemap_display(-0.5) == 0.0);
    REQUIRE(tonemap_display(2.0) == 1.0);
    REQUIRE(tonemap_display(0.5) == Catch::Approx(linear_to_srgb(0.5)).margin(1e-12));
}

TEST_CASE("display png files are deterministic and carry the signature") {
    Image img(9, 6, 3);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> uni(0.0f, 2.0f);
    for (auto& v : img.data) v = uni(rng);
    auto dir = temp_dir("png");
    std::string p1 = (dir / "a.png").string(), p2 = (dir / "b.png").string();
    write_display_png(p1, img);
    write_display_png(p2, img);
    auto slurp = [](const std::string& p) {
        FILE* f = std::fopen(p.c_str(), "rb");
        REQUIRE(f != nullptr);
        std::vector<unsigned char> bytes;
        int ch;
        while ((ch = std::fgetc(f)) != EOF) bytes.push_back((unsigned char)ch);
        std::fclose(f);
        return bytes;
    };
    auto a = slurp(p1), b = slurp(p2);
    REQUIRE(a == b);
    REQUIRE(a.size() > 8);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    for (int i = 0; i < 8; ++i) REQUIRE(a[size_t(i)] == sig[i]);
}
