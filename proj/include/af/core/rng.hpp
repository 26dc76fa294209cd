// Deterministic RNG. Two flavors:
//  - Rng: sequential splitmix64 stream, for setup/init work.
//  - keyed_uniform(...): stateless counter-based draws keyed by
//    (seed, pixel, sample, dim), so parallel schedules stay bit-identical.
#pragma once

#include <cmath>
#include <cstdint>

#include "af/core/vec.hpp"

namespace af {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

inline double u64_to_unit(uint64_t x) {
    // 53 mantissa bits -> [0,1)
    return double(x >> 11) * 0x1.0p-53;
}

// Stateless draw: same key -> same value, independent of call order.
inline double keyed_uniform(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = splitmix64(seed);
    h = hash_combine(h, a);
    h = hash_combine(h, b);
    h = hash_combine(h, c);
    return u64_to_unit(h);
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(splitmix64(seed ^ 0x6a09e667f3bcc909ull)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    double uniform() { return u64_to_unit(next_u64()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, cached pair discarded for simplicity.
    double gaussian() {
        double u1 = uniform(), u2 = uniform();
        u1 = std::fmax(u1, 1e-300);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    Vec3 unit_sphere() {
        double z = uniform(-1.0, 1.0);
        double phi = uniform(0.0, 2.0 * kPi);
        double s = std::sqrt(std::fmax(0.0, 1.0 - z * z));
        return {s * std::cos(phi), s * std::sin(phi), z};
    }

private:
    uint64_t state_;
};

// Low-discrepancy pair: (i/n, radical inverse base 2).
inline Vec2 hammersley(uint32_t i, uint32_t n) {
    uint32_t bits = i;
    bits = (bits << 16u) | (bits >> 16u);
    bits = ((bits & 0x55555555u) << 1u) | ((bits & 0xAAAAAAAAu) >> 1u);
    bits = ((bits & 0x33333333u) << 2u) | ((bits & 0xCCCCCCCCu) >> 2u);
    bits = ((bits & 0x0F0F0F0Fu) << 4u) | ((bits & 0xF0F0F0F0u) >> 4u);
    bits = ((bits & 0x00FF00FFu) << 8u) | ((bits & 0xFF00FF00u) >> 8u);
    return {double(i) / double(n), double(bits) * 2.3283064365386963e-10};
}

// Tangent basis for a unit normal.
inline void make_basis(Vec3 n, Vec3& t, Vec3& b) {
    if (std::fabs(n.z) < 0.999) {
        t = normalized(cross(Vec3{0, 0, 1}, n));
    } else {
        t = normalized(cross(Vec3{1, 0, 0}, n));
    }
    b = cross(n, t);
}

// Cosine-weighted hemisphere sample around unit n; pdf = cos/pi.
inline Vec3 sample_cosine(Vec3 n, double u1, double u2) {
    double r = std::sqrt(u1);
    double phi = 2.0 * kPi * u2;
    double lx = r * std::cos(phi), ly = r * std::sin(phi);
    double lz = std::sqrt(std::fmax(0.0, 1.0 - u1));
    Vec3 t, b;
    make_basis(n, t, b);
    return normalized(lx * t + ly * b + lz * n);
}

// GGX half-vector sample around unit n; pdf_h = D(h) (n.h).
inline Vec3 sample_ggx_half(Vec3 n, double alpha, double u1, double u2) {
    double phi = 2.0 * kPi * u1;
    double a2 = alpha * alpha;
    double cos2 = (1.0 - u2) / (1.0 + (a2 - 1.0) * u2);
    double cos_t = std::sqrt(std::fmax(0.0, cos2));
    double sin_t = std::sqrt(std::fmax(0.0, 1.0 - cos2));
    Vec3 t, b;
    make_basis(n, t, b);
    return normalized(sin_t * std::cos(phi) * t + sin_t * std::sin(phi) * b + cos_t * n);
}

} // namespace af
