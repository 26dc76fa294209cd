// Minimal 8-bit PNG writer (zlib for the IDAT stream). Input values are
// display-space in [0,1] and are clamped before quantization.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>
#include <zlib.h>

#include "af/core/image.hpp"

namespace af {

namespace detail {
inline void png_chunk(FILE* f, const char type[4], const uint8_t* data, uint32_t len) {
    uint8_t head[8];
    head[0] = uint8_t(len >> 24); head[1] = uint8_t(len >> 16);
    head[2] = uint8_t(len >> 8);  head[3] = uint8_t(len);
    memcpy(head + 4, type, 4);
    fwrite(head, 1, 8, f);
    if (len) fwrite(data, 1, len, f);
    uint32_t crc = crc32(0, head + 4, 4);
    if (len) crc = crc32(crc, data, len);
    uint8_t tail[4] = {uint8_t(crc >> 24), uint8_t(crc >> 16), uint8_t(crc >> 8), uint8_t(crc)};
    fwrite(tail, 1, 4, f);
}
} // namespace detail

inline void write_png(const std::string& path, const Image& img) {
    if (img.c != 1 && img.c != 3) throw std::runtime_error("png: only 1 or 3 channels");
    const int bpp = img.c;
    std::vector<uint8_t> raw(size_t(img.h) * (1 + size_t(img.w) * bpp));
    size_t p = 0;
    for (int y = 0; y < img.h; ++y) {
        raw[p++] = 0; // filter: none
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < bpp; ++ch) {
                float v = img.at(x, y, ch);
                if (v < 0.0f) v = 0.0f;
                if (v > 1.0f) v = 1.0f;
                raw[p++] = uint8_t(v * 255.0f + 0.5f);
            }
    }
    uLongf zcap = compressBound(uLong(raw.size()));
    std::vector<uint8_t> z(zcap);
    if (compress2(z.data(), &zcap, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    FILE* f = fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("png: cannot write " + path);
    const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    fwrite(sig, 1, 8, f);
    uint8_t ihdr[13];
    ihdr[0] = uint8_t(img.w >> 24); ihdr[1] = uint8_t(img.w >> 16); ihdr[2] = uint8_t(img.w >> 8); ihdr[3] = uint8_t(img.w);
    ihdr[4] = uint8_t(img.h >> 24); ihdr[5] = uint8_t(img.h >> 16); ihdr[6] = uint8_t(img.h >> 8); ihdr[7] = uint8_t(img.h);
    ihdr[8] = 8;                       // bit depth
    ihdr[9] = bpp == 3 ? 2 : 0;        // color type: truecolor or grayscale
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    detail::png_chunk(f, "IHDR", ihdr, 13);
    detail::png_chunk(f, "IDAT", z.data(), uint32_t(zcap));
    detail::png_chunk(f, "IEND", nullptr, 0);
    fclose(f);
}

} // namespace af
