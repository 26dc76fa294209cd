// Integrated directional encoding: SH bands l in {1,2,4,8,16}, each
// attenuated by the vMF expectation factor A_l(kappa) = exp(-l(l+1)/(2 kappa))
// with concentration kappa = 1/roughness. Feature length 67 = sum(2l+1).
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "af/light/sh.hpp"

namespace af {

constexpr std::array<int, 5> kIdeBands = {1, 2, 4, 8, 16};
constexpr int kIdeFeatureLen = 3 + 5 + 9 + 17 + 33; // 67

inline double ide_band_attenuation(int l, double roughness) {
    return std::exp(-0.5 * l * (l + 1) * roughness);
}

inline std::vector<double> ide_encode(const Vec3& dir, double roughness) {
    std::vector<double> Y(sh_count(kShMaxBand));
    sh_eval_grad(dir.x, dir.y, dir.z, kShMaxBand, Y.data());
    std::vector<double> out(kIdeFeatureLen);
    int j = 0;
    for (int l : kIdeBands) {
        double a = ide_band_attenuation(l, roughness);
        for (int m = -l; m <= l; ++m) out[j++] = a * Y[sh_index(l, m)];
    }
    return out;
}

} // namespace af
