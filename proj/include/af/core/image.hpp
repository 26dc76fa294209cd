// Float image container plus PFM and Radiance HDR I/O.
// PFM: rows are stored bottom-up; a negative scale marks little-endian data.
// HDR is read-only; RGBE decodes as m * 2^(e-136).
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace af {

struct Image {
    int w = 0, h = 0, c = 0;
    std::vector<float> data; // row-major, top-down, interleaved channels

    Image() = default;
    Image(int w_, int h_, int c_) : w(w_), h(h_), c(c_), data(size_t(w_) * h_ * c_, 0.0f) {}

    float& at(int x, int y, int ch) { return data[(size_t(y) * w + x) * c + ch]; }
    float at(int x, int y, int ch) const { return data[(size_t(y) * w + x) * c + ch]; }
    size_t count() const { return data.size(); }
};

namespace detail {
inline void pfm_token(FILE* f, char* buf, size_t cap) {
    int ch;
    do { ch = fgetc(f); } while (ch == ' ' || ch == '\n' || ch == '\r' || ch == '\t');
    size_t n = 0;
    while (ch != EOF && ch != ' ' && ch != '\n' && ch != '\r' && ch != '\t') {
        if (n + 1 < cap) buf[n++] = char(ch);
        ch = fgetc(f);
    }
    buf[n] = '\0';
    if (n == 0) throw std::runtime_error("pfm: truncated header");
}
} // namespace detail

inline Image read_pfm(const std::string& path) {
    FILE* f = fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("pfm: cannot open " + path);
    char tok[64];
    detail::pfm_token(f, tok, sizeof tok);
    int channels;
    if (strcmp(tok, "PF") == 0) channels = 3;
    else if (strcmp(tok, "Pf") == 0) channels = 1;
    else { fclose(f); throw std::runtime_error("pfm: bad magic in " + path); }
    detail::pfm_token(f, tok, sizeof tok);
    int w = atoi(tok);
    detail::pfm_token(f, tok, sizeof tok);
    int h = atoi(tok);
    detail::pfm_token(f, tok, sizeof tok);
    double scale = atof(tok);
    if (w <= 0 || h <= 0 || scale == 0.0) { fclose(f); throw std::runtime_error("pfm: bad header in " + path); }
    bool little = scale < 0.0;
    Image img(w, h, channels);
    std::vector<float> row(size_t(w) * channels);
    for (int y = h - 1; y >= 0; --y) { // file rows run bottom-up
        if (fread(row.data(), 4, row.size(), f) != row.size()) {
            fclose(f);
            throw std::runtime_error("pfm: truncated data in " + path);
        }
        if (!little) {
            for (auto& v : row) {
                uint32_t u;
                memcpy(&u, &v, 4);
                u = __builtin_bswap32(u);
                memcpy(&v, &u, 4);
            }
        }
        memcpy(&img.data[size_t(y) * w * channels], row.data(), row.size() * 4);
    }
    fclose(f);
    double s = little ? -scale : scale;
    if (s != 1.0) for (auto& v : img.data) v = float(v * s);
    return img;
}

inline void write_pfm(const std::string& path, const Image& img) {
    if (img.c != 1 && img.c != 3) throw std::runtime_error("pfm: only 1 or 3 channels");
    FILE* f = fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("pfm: cannot write " + path);
    fprintf(f, "%s\n%d %d\n-1.0\n", img.c == 3 ? "PF" : "Pf", img.w, img.h);
    for (int y = img.h - 1; y >= 0; --y)
        fwrite(&img.data[size_t(y) * img.w * img.c], 4, size_t(img.w) * img.c, f);
    fclose(f);
}

// Radiance .hdr loader (flat and RLE scanlines).
inline Image read_hdr(const std::string& path) {
    FILE* f = fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("hdr: cannot open " + path);
    char line[512];
    if (!fgets(line, sizeof line, f) || (strncmp(line, "#?RADIANCE", 10) != 0 && strncmp(line, "#?RGBE", 6) != 0)) {
        fclose(f);
        throw std::runtime_error("hdr: bad magic in " + path);
    }
    while (fgets(line, sizeof line, f)) {
        if (line[0] == '\n' || line[0] == '\r') break; // blank line ends header
    }
    int w = 0, h = 0;
    if (!fgets(line, sizeof line, f) || sscanf(line, "-Y %d +X %d", &h, &w) != 2) {
        fclose(f);
        throw std::runtime_error("hdr: unsupported resolution line in " + path);
    }
    Image img(w, h, 3);
    std::vector<uint8_t> scan(size_t(w) * 4);
    for (int y = 0; y < h; ++y) {
        uint8_t hdr4[4];
        if (fread(hdr4, 1, 4, f) != 4) { fclose(f); throw std::runtime_error("hdr: truncated " + path); }
        if (hdr4[0] == 2 && hdr4[1] == 2 && ((hdr4[2] << 8) | hdr4[3]) == w && w >= 8 && w < 32768) {
            // new-style RLE: four separated component planes
            for (int comp = 0; comp < 4; ++comp) {
                int x = 0;
                while (x < w) {
                    int code = fgetc(f);
                    if (code == EOF) { fclose(f); throw std::runtime_error("hdr: truncated " + path); }
                    if (code > 128) {
                        int run = code - 128;
                        int val = fgetc(f);
                        if (val == EOF || x + run > w) { fclose(f); throw std::runtime_error("hdr: bad rle in " + path); }
                        for (int i = 0; i < run; ++i) scan[size_t(x++) * 4 + comp] = uint8_t(val);
                    } else {
                        int run = code;
                        if (x + run > w) { fclose(f); throw std::runtime_error("hdr: bad rle in " + path); }
                        for (int i = 0; i < run; ++i) {
                            int val = fgetc(f);
                            if (val == EOF) { fclose(f); throw std::runtime_error("hdr: truncated " + path); }
                            scan[size_t(x++) * 4 + comp] = uint8_t(val);
                        }
                    }
                }
            }
        } else {
            // flat scanline; first pixel already consumed
            memcpy(scan.data(), hdr4, 4);
            if (w > 1 && fread(scan.data() + 4, 4, size_t(w) - 1, f) != size_t(w) - 1) {
                fclose(f);
                throw std::runtime_error("hdr: truncated " + path);
            }
        }
        for (int x = 0; x < w; ++x) {
            const uint8_t* p = &scan[size_t(x) * 4];
            int e = p[3];
            float s = e ? std::ldexp(1.0f, e - 136) : 0.0f;
            img.at(x, y, 0) = p[0] * s;
            img.at(x, y, 1) = p[1] * s;
            img.at(x, y, 2) = p[2] * s;
        }
    }
    fclose(f);
    return img;
}

} // namespace af
