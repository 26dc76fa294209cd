#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "af/core/image.hpp"
#include "af/core/rng.hpp"
#include "af/core/vec.hpp"

namespace af {

// Equirectangular radiance map, 3 channels, linear.  Row y covers polar angle
// theta = (y+0.5)/h * pi from +z; column x covers azimuth phi = (x+0.5)/w * 2pi
// from +x toward +y.
struct EnvMap {
    Image img;

    int width() const { return img.w; }
    int height() const { return img.h; }
};

inline Vec3 env_uv_to_dir(double u, double v) {
    double phi = u * 2.0 * kPi;
    double theta = v * kPi;
    double st = std::sin(theta);
    return {st * std::cos(phi), st * std::sin(phi), std::cos(theta)};
}

inline Vec3 env_texel_dir(const EnvMap& e, int x, int y) {
    return env_uv_to_dir((x + 0.5) / e.width(), (y + 0.5) / e.height());
}

// Solid angle of every texel in row y.
inline double env_texel_solid_angle(const EnvMap& e, int y) {
    double theta = (y + 0.5) / e.height() * kPi;
    return std::sin(theta) * (kPi / e.height()) * (2.0 * kPi / e.width());
}

// Bilinear lookup at texel centers; wraps in azimuth, clamps at the poles.
inline Vec3 env_lookup_image(const Image& im, Vec3 dir) {
    Vec3 d = normalized(dir);
    double phi = std::atan2(d.y, d.x);
    if (phi < 0.0) phi += 2.0 * kPi;
    double theta = std::acos(std::clamp(d.z, -1.0, 1.0));
    double fx = phi / (2.0 * kPi) * im.w - 0.5;
    double fy = theta / kPi * im.h - 0.5;
    int x0 = int(std::floor(fx)), y0 = int(std::floor(fy));
    double tx = fx - x0, ty = fy - y0;
    int y1 = y0 + 1;
    int yc0 = std::clamp(y0, 0, im.h - 1), yc1 = std::clamp(y1, 0, im.h - 1);
    int xw0 = ((x0 % im.w) + im.w) % im.w, xw1 = (xw0 + 1) % im.w;
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
        double v00 = im.at(xw0, yc0, c), v10 = im.at(xw1, yc0, c);
        double v01 = im.at(xw0, yc1, c), v11 = im.at(xw1, yc1, c);
        out[c] = (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
    }
    return out;
}

inline Vec3 env_lookup(const EnvMap& e, Vec3 dir) { return env_lookup_image(e.img, dir); }

// Solid-angle weighted mean of the channel-averaged radiance.
inline double env_mean(const EnvMap& e) {
    double acc = 0.0, wacc = 0.0;
    for (int y = 0; y < e.height(); ++y) {
        double w = env_texel_solid_angle(e, y);
        for (int x = 0; x < e.width(); ++x) {
            double m = (e.img.at(x, y, 0) + e.img.at(x, y, 1) + e.img.at(x, y, 2)) / 3.0;
            acc += w * m;
            wacc += w;
        }
    }
    return acc / wacc;
}

inline void scale_env(EnvMap& e, double s) {
    for (auto& v : e.img.data) v = float(v * s);
}

inline void validate_env(const EnvMap& e, const std::string& origin) {
    if (e.img.c != 3) throw std::runtime_error("envmap: " + origin + ": expected 3 channels");
    if (e.img.w < 2 || e.img.h < 2) throw std::runtime_error("envmap: " + origin + ": too small");
    for (float v : e.img.data) {
        if (!(v >= 0.0f) || !std::isfinite(v))
            throw std::runtime_error("envmap: " + origin + ": negative or non-finite texel");
    }
}

inline EnvMap load_envmap(const std::string& path) {
    EnvMap e;
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".hdr") == 0)
        e.img = read_hdr(path);
    else
        e.img = read_pfm(path);
    if (e.img.c == 1) {
        Image rgb(e.img.w, e.img.h, 3);
        for (int y = 0; y < e.img.h; ++y)
            for (int x = 0; x < e.img.w; ++x)
                for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = e.img.at(x, y, 0);
        e.img = rgb;
    }
    validate_env(e, path);
    return e;
}

inline void save_envmap(const std::string& path, const EnvMap& e) { write_pfm(path, e.img); }

// Smooth seeded test illumination: constant base plus von Mises-Fisher blobs,
// rescaled to unit mean radiance.
inline EnvMap make_env_procedural(int w, int h, uint64_t seed, int blobs = 4, double base = 0.25) {
    EnvMap e;
    e.img = Image(w, h, 3);
    Rng rng(hash_combine(seed, 0x9e6d5a));
    std::vector<Vec3> dir(blobs), col(blobs);
    std::vector<double> kappa(blobs);
    for (int b = 0; b < blobs; ++b) {
        dir[b] = rng.unit_sphere();
        col[b] = {0.3 + 1.7 * rng.uniform(), 0.3 + 1.7 * rng.uniform(), 0.3 + 1.7 * rng.uniform()};
        kappa[b] = 4.0 + 28.0 * rng.uniform();
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            Vec3 d = env_texel_dir(e, x, y);
            Vec3 v = {base, base, base};
            for (int b = 0; b < blobs; ++b) {
                double g = std::exp(kappa[b] * (dot(d, dir[b]) - 1.0));
                v += g * col[b];
            }
            for (int c = 0; c < 3; ++c) e.img.at(x, y, c) = float(v[c]);
        }
    }
    scale_env(e, 1.0 / env_mean(e));
    return e;
}

// Exact rotation about +z by whole texels (azimuth roll).
inline EnvMap rotate_env_azimuth(const EnvMap& e, int shift_texels) {
    EnvMap out;
    out.img = Image(e.img.w, e.img.h, 3);
    int w = e.img.w;
    int s = ((shift_texels % w) + w) % w;
    for (int y = 0; y < e.img.h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.img.at(x, y, c) = e.img.at((x + w - s) % w, y, c);
    return out;
}

} // namespace af
