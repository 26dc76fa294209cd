#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "af/core/image.hpp"
#include "af/core/png.hpp"

namespace af {

// Piecewise sRGB transfer with breakpoint 0.0031308 -> 0.04045.  Extends
// smoothly above 1 (HDR inputs stay monotone).
inline double linear_to_srgb(double x) {
    if (x <= 0.0031308) return 12.92 * x;
    return 1.055 * std::pow(x, 1.0 / 2.4) - 0.055;
}

inline double srgb_to_linear(double y) {
    if (y <= 0.04045) return y / 12.92;
    return std::pow((y + 0.055) / 1.055, 2.4);
}

// Display mapping for HDR renders: sRGB transfer then clamp to [0,1].
inline double tonemap_display(double x) {
    return std::clamp(linear_to_srgb(std::max(x, 0.0)), 0.0, 1.0);
}

inline Image tonemap_image(const Image& linear) {
    Image out(linear.w, linear.h, linear.c);
    for (size_t i = 0; i < linear.data.size(); ++i)
        out.data[i] = static_cast<float>(tonemap_display(linear.data[i]));
    return out;
}

inline void write_display_png(const std::string& path, const Image& linear) {
    write_png(path, tonemap_image(linear));
}

} // namespace af
