#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "af/core/vec.hpp"

namespace af {

struct MaterialSample {
    Vec3 rho{0.5, 0.5, 0.5};
    double rough = 0.5;
    double spec = 0.5;
};

// Material in canonical space; region selects F0 and coarse defaults.
using MaterialFn = std::function<MaterialSample(const Vec3& x_c, int region)>;

// Roughness floor; material heads and LUT lookups clamp to [kRoughnessMin, 1].
inline constexpr double kRoughnessMin = 0.04;

// Fresnel reflectance at normal incidence for dielectrics.
inline constexpr double kF0Default = 0.047;
inline constexpr double kF0Skin = 0.028;

// Region labels carried per vertex; selects F0 in the second training stage.
enum RegionLabel : int { kRegionOther = 0, kRegionSkin = 1 };

inline double f0_for_region(int label) {
    return label == kRegionSkin ? kF0Skin : kF0Default;
}

// GGX normal distribution, alpha = roughness^2.  r = 1 gives the cosine
// limit D = 1/pi for every half angle.
inline double ggx_ndf(double n_dot_h, double roughness) {
    double a = roughness * roughness;
    double a2 = a * a;
    double c = std::clamp(n_dot_h, 0.0, 1.0);
    double d = c * c * (a2 - 1.0) + 1.0;
    return a2 / (kPi * d * d);
}

inline double smith_g1(double n_dot_x, double k) {
    double c = std::clamp(n_dot_x, 0.0, 1.0);
    return c / (c * (1.0 - k) + k);
}

// Separable Smith shadowing with k = alpha / 2.
inline double smith_g(double n_dot_v, double n_dot_l, double roughness) {
    double k = roughness * roughness * 0.5;
    return smith_g1(n_dot_v, k) * smith_g1(n_dot_l, k);
}

inline double fresnel_schlick(double cos_theta, double f0) {
    double m = std::clamp(1.0 - cos_theta, 0.0, 1.0);
    double m2 = m * m;
    return f0 + (1.0 - f0) * m2 * m2 * m;
}

// Mirror direction of w about unit normal n (both pointing away from the surface).
inline Vec3 reflect_about(Vec3 w, Vec3 n) {
    return 2.0 * dot(w, n) * n - w;
}

} // namespace af
