#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "af/core/image.hpp"

namespace af {

struct MetricsResult {
    bool defined = false; // false when the mask is empty
    double l1 = 0.0;
    double psnr = 0.0; // capped at 99 dB, peak 1.0
    double ssim = 0.0;
};

namespace detail {

// Channel-mean grayscale for SSIM.
inline std::vector<double> to_gray(const Image& im) {
    std::vector<double> g(size_t(im.w) * im.h, 0.0);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x) {
            double s = 0.0;
            for (int c = 0; c < im.c; ++c) s += im.at(x, y, c);
            g[size_t(y) * im.w + x] = s / im.c;
        }
    return g;
}

} // namespace detail

// L1 / PSNR / SSIM over the masked region; images share shape, values are
// expected in [0,1] (peak 1 for PSNR).  SSIM uses an 11x11 Gaussian window
// (sigma 1.5) with the standard constants.
inline MetricsResult compute_metrics(const Image& a, const Image& b, const Image& mask) {
    if (a.w != b.w || a.h != b.h || a.c != b.c) throw std::runtime_error("metrics: image shape mismatch");
    if (mask.w != a.w || mask.h != a.h || mask.c != 1) throw std::runtime_error("metrics: mask shape mismatch");
    MetricsResult r;
    double n = 0.0, l1 = 0.0, mse = 0.0;
    for (int y = 0; y < a.h; ++y) {
        for (int x = 0; x < a.w; ++x) {
            if (mask.at(x, y, 0) <= 0.5) continue;
            n += 1.0;
            for (int c = 0; c < a.c; ++c) {
                double d = double(a.at(x, y, c)) - double(b.at(x, y, c));
                l1 += std::abs(d);
                mse += d * d;
            }
        }
    }
    if (n == 0.0) return r;
    r.defined = true;
    r.l1 = l1 / (n * a.c);
    mse /= n * a.c;
    r.psnr = mse <= 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));

    const int rad = 5;
    double w[11];
    double wsum = 0.0;
    for (int i = -rad; i <= rad; ++i) {
        w[i + rad] = std::exp(-0.5 * i * i / (1.5 * 1.5));
        wsum += w[i + rad];
    }
    for (double& x : w) x /= wsum;
    std::vector<double> ga = detail::to_gray(a), gb = detail::to_gray(b);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double ssim_acc = 0.0, ssim_n = 0.0;
    for (int y = 0; y < a.h; ++y) {
        for (int x = 0; x < a.w; ++x) {
            if (mask.at(x, y, 0) <= 0.5) continue;
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int dy = -rad; dy <= rad; ++dy) {
                int sy = std::clamp(y + dy, 0, a.h - 1);
                for (int dx = -rad; dx <= rad; ++dx) {
                    int sx = std::clamp(x + dx, 0, a.w - 1);
                    double ww = w[dy + rad] * w[dx + rad];
                    double va = ga[size_t(sy) * a.w + sx], vb = gb[size_t(sy) * a.w + sx];
                    mx += ww * va;
                    my += ww * vb;
                    sxx += ww * va * va;
                    syy += ww * vb * vb;
                    sxy += ww * va * vb;
                }
            }
            sxx -= mx * mx;
            syy -= my * my;
            sxy -= mx * my;
            double v = ((2 * mx * my + c1) * (2 * sxy + c2)) /
                       ((mx * mx + my * my + c1) * (sxx + syy + c2));
            ssim_acc += v;
            ssim_n += 1.0;
        }
    }
    r.ssim = ssim_acc / ssim_n;
    return r;
}

} // namespace af
