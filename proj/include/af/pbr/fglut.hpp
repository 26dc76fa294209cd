#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "af/core/rng.hpp"
#include "af/core/thread.hpp"
#include "af/nn/tape.hpp"
#include "af/pbr/brdf.hpp"

namespace af {

namespace detail {

// One split-sum sample for the Fresnel-factored environment BRDF.
// View v = (sv, 0, cv) in the tangent frame; the half vector comes from the
// GGX polar CDF at u with azimuth (cphi, sphi).  Estimator per sample is
// G * (v.h) / ((n.v)(n.h)) split into the (1-F) scale and F bias channels.
inline void fg_accumulate(double roughness, double cv, double sv, double cphi, double sphi,
                          double u, double& s_acc, double& b_acc) {
    double a = roughness * roughness;
    double a2 = a * a;
    double ch2 = (1.0 - u) / (1.0 + (a2 - 1.0) * u);
    double ch = std::sqrt(std::fmax(0.0, ch2));
    double sh = std::sqrt(std::fmax(0.0, 1.0 - ch2));
    double hx = sh * cphi, hy = sh * sphi, hz = ch;
    double vh = sv * hx + cv * hz;
    double lz = 2.0 * vh * hz - cv;
    if (lz <= 0.0 || vh <= 0.0 || ch <= 0.0) return;
    double g = smith_g(cv, lz, roughness);
    double w = g * vh / (cv * ch);
    double m = 1.0 - vh;
    double m2 = m * m;
    double fr = m2 * m2 * m;
    s_acc += w * (1.0 - fr);
    b_acc += w * fr;
}

} // namespace detail

// Quasi-random bake at texel centers r=(i+0.5)/rows, cos=(j+0.5)/cols.
// Throws if any cell breaks the energy bound scale + bias <= 1 + 1e-2.
inline nn::FgTable bake_fg_lut(int rows = 64, int cols = 64, int samples = 4096) {
    if (rows <= 0 || cols <= 0 || samples <= 0) throw std::runtime_error("bake_fg_lut: bad arguments");
    std::vector<double> cphi(samples), sphi(samples), us(samples);
    for (int s = 0; s < samples; ++s) {
        Vec2 u = hammersley(uint32_t(s), uint32_t(samples));
        cphi[s] = std::cos(2.0 * kPi * u.x);
        sphi[s] = std::sin(2.0 * kPi * u.x);
        us[s] = u.y;
    }
    nn::FgTable t;
    t.rows = rows;
    t.cols = cols;
    t.scale.assign(size_t(rows) * cols, 0.0);
    t.bias.assign(size_t(rows) * cols, 0.0);
    parallel_for(rows, 1, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            double rough = (double(i) + 0.5) / rows;
            for (int j = 0; j < cols; ++j) {
                double cv = (double(j) + 0.5) / cols;
                double sv = std::sqrt(std::fmax(0.0, 1.0 - cv * cv));
                double sa = 0.0, ba = 0.0;
                for (int s = 0; s < samples; ++s)
                    detail::fg_accumulate(rough, cv, sv, cphi[s], sphi[s], us[s], sa, ba);
                t.scale[size_t(i) * cols + j] = sa / samples;
                t.bias[size_t(i) * cols + j] = ba / samples;
            }
        }
    });
    for (size_t i = 0; i < t.scale.size(); ++i) {
        if (!(t.scale[i] >= -1e-6 && t.bias[i] >= -1e-6 && t.scale[i] + t.bias[i] <= 1.0 + 1e-2))
            throw std::runtime_error("bake_fg_lut: energy bound violated at cell " + std::to_string(i));
    }
    return t;
}

// Independent pseudo-random estimate of one cell, for validation.
inline void fg_reference_cell(double roughness, double n_dot_v, int samples, uint64_t seed,
                              double& scale, double& bias) {
    Rng rng(seed);
    double cv = n_dot_v;
    double sv = std::sqrt(std::fmax(0.0, 1.0 - cv * cv));
    double sa = 0.0, ba = 0.0;
    for (int s = 0; s < samples; ++s) {
        double phi = 2.0 * kPi * rng.uniform();
        detail::fg_accumulate(roughness, cv, sv, std::cos(phi), std::sin(phi), rng.uniform(), sa, ba);
    }
    scale = sa / samples;
    bias = ba / samples;
}

inline void save_fg_lut(const std::string& path, const nn::FgTable& t) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("save_fg_lut: cannot open " + path);
    std::fwrite("FGLT", 1, 4, f);
    uint32_t dims[2] = {uint32_t(t.rows), uint32_t(t.cols)};
    std::fwrite(dims, 4, 2, f);
    for (size_t i = 0; i < t.scale.size(); ++i) {
        float pair[2] = {float(t.scale[i]), float(t.bias[i])};
        std::fwrite(pair, 4, 2, f);
    }
    std::fclose(f);
}

inline nn::FgTable load_fg_lut(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("load_fg_lut: cannot open " + path);
    char magic[4];
    uint32_t dims[2];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "FGLT", 4) != 0) {
        std::fclose(f);
        throw std::runtime_error("load_fg_lut: not an FGLT file: " + path);
    }
    if (std::fread(dims, 4, 2, f) != 2 || dims[0] == 0 || dims[1] == 0) {
        std::fclose(f);
        throw std::runtime_error("load_fg_lut: bad header in " + path);
    }
    nn::FgTable t;
    t.rows = int(dims[0]);
    t.cols = int(dims[1]);
    size_t n = size_t(t.rows) * t.cols;
    t.scale.resize(n);
    t.bias.resize(n);
    for (size_t i = 0; i < n; ++i) {
        float pair[2];
        if (std::fread(pair, 4, 2, f) != 2) {
            std::fclose(f);
            throw std::runtime_error("load_fg_lut: truncated file " + path);
        }
        t.scale[i] = pair[0];
        t.bias[i] = pair[1];
    }
    std::fclose(f);
    return t;
}

} // namespace af
