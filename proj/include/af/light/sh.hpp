// Real spherical harmonics up to l=16, orthonormal over the sphere,
// evaluated as Cartesian polynomials (valid off the unit sphere too, which
// keeps finite-difference checks of the gradients meaningful).
//   Y_{l,0}  = K(l,0) p_l^0(z)
//   Y_{l,m}  = sqrt(2) K(l,m) p_l^m(z) A_m(x,y)   (m > 0)
//   Y_{l,-m} = sqrt(2) K(l,m) p_l^m(z) B_m(x,y)
// where A_m + i B_m = (x+iy)^m and p_l^m is the associated Legendre function
// with the sin^m(theta) factor removed (and no Condon-Shortley sign).
// Index of (l,m) in the output array: l*l + l + m.
#pragma once

#include <cmath>
#include <vector>

#include "af/core/vec.hpp"

namespace af {

constexpr int kShMaxBand = 16;

constexpr int sh_index(int l, int m) { return l * l + l + m; }
constexpr int sh_count(int l_max) { return (l_max + 1) * (l_max + 1); }

namespace detail {

// K(l,m)^2 = (2l+1)/(4pi) * (l-m)!/(l+m)!
inline const double* sh_norms() {
    static std::vector<double> k = [] {
        std::vector<double> out(sh_count(kShMaxBand));
        for (int l = 0; l <= kShMaxBand; ++l)
            for (int m = 0; m <= l; ++m) {
                double k2 = (2.0 * l + 1.0) / (4.0 * kPi);
                for (int i = l - m + 1; i <= l + m; ++i) k2 /= double(i);
                out[size_t(l * (l + 1) / 2 + m)] = std::sqrt(k2);
            }
        return out;
    }();
    return k.data();
}

inline int tri(int l, int m) { return l * (l + 1) / 2 + m; }

} // namespace detail

// Y: sh_count(l_max) values. dY*: optional per-component derivatives.
inline void sh_eval_grad(double x, double y, double z, int l_max, double* Y,
                         double* dYx = nullptr, double* dYy = nullptr, double* dYz = nullptr) {
    const int L = l_max;
    const int T = detail::tri(L, L) + 1;
    double p[153], dp[153];   // scaled Legendre table and d/dz, triangular
    double A[17], B[17];      // Re/Im of (x+iy)^m
    const double* K = detail::sh_norms();
    const double s2 = std::sqrt(2.0);

    A[0] = 1.0;
    B[0] = 0.0;
    for (int m = 1; m <= L; ++m) {
        A[m] = x * A[m - 1] - y * B[m - 1];
        B[m] = x * B[m - 1] + y * A[m - 1];
    }
    // diagonal and first off-diagonal, then three-term recurrence in l
    p[detail::tri(0, 0)] = 1.0;
    dp[detail::tri(0, 0)] = 0.0;
    for (int m = 1; m <= L; ++m) {
        p[detail::tri(m, m)] = (2.0 * m - 1.0) * p[detail::tri(m - 1, m - 1)];
        dp[detail::tri(m, m)] = 0.0;
    }
    for (int m = 0; m < L; ++m) {
        p[detail::tri(m + 1, m)] = (2.0 * m + 1.0) * z * p[detail::tri(m, m)];
        dp[detail::tri(m + 1, m)] = (2.0 * m + 1.0) * p[detail::tri(m, m)];
    }
    for (int m = 0; m <= L; ++m)
        for (int l = m + 2; l <= L; ++l) {
            double pl1 = p[detail::tri(l - 1, m)], pl2 = p[detail::tri(l - 2, m)];
            double dl1 = dp[detail::tri(l - 1, m)], dl2 = dp[detail::tri(l - 2, m)];
            double inv = 1.0 / double(l - m);
            p[detail::tri(l, m)] = ((2.0 * l - 1.0) * z * pl1 - (l + m - 1.0) * pl2) * inv;
            dp[detail::tri(l, m)] = ((2.0 * l - 1.0) * (pl1 + z * dl1) - (l + m - 1.0) * dl2) * inv;
        }
    (void)T;

    for (int l = 0; l <= L; ++l) {
        Y[sh_index(l, 0)] = K[detail::tri(l, 0)] * p[detail::tri(l, 0)];
        if (dYx) {
            dYx[sh_index(l, 0)] = 0.0;
            dYy[sh_index(l, 0)] = 0.0;
            dYz[sh_index(l, 0)] = K[detail::tri(l, 0)] * dp[detail::tri(l, 0)];
        }
        for (int m = 1; m <= l; ++m) {
            double c = s2 * K[detail::tri(l, m)];
            double pl = p[detail::tri(l, m)];
            Y[sh_index(l, m)] = c * pl * A[m];
            Y[sh_index(l, -m)] = c * pl * B[m];
            if (dYx) {
                // d/dx (x+iy)^m = m (x+iy)^(m-1)
                double dAx = m * A[m - 1], dAy = -double(m) * B[m - 1];
                double dBx = m * B[m - 1], dBy = double(m) * A[m - 1];
                double dpl = dp[detail::tri(l, m)];
                dYx[sh_index(l, m)] = c * pl * dAx;
                dYy[sh_index(l, m)] = c * pl * dAy;
                dYz[sh_index(l, m)] = c * dpl * A[m];
                dYx[sh_index(l, -m)] = c * pl * dBx;
                dYy[sh_index(l, -m)] = c * pl * dBy;
                dYz[sh_index(l, -m)] = c * dpl * B[m];
            }
        }
    }
}

inline std::vector<double> sh_basis(const Vec3& dir, int l_max) {
    std::vector<double> out(sh_count(l_max));
    sh_eval_grad(dir.x, dir.y, dir.z, l_max, out.data());
    return out;
}

} // namespace af
