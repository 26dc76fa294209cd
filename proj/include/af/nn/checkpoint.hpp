// Checkpoint container: magic "FLRW", u32 version, then named tensors
// (u16 name length, name bytes, u8 rank, u32 dims, f64 row-major data),
// little-endian throughout.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "af/nn/mlp.hpp"
#include "af/nn/tensor.hpp"

namespace af::nn {

inline void save_tensors(const std::string& path, const std::map<std::string, Tensor>& tensors) {
    FILE* f = fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    fwrite("FLRW", 1, 4, f);
    uint32_t version = 1;
    fwrite(&version, 4, 1, f);
    for (const auto& [name, t] : tensors) {
        uint16_t len = uint16_t(name.size());
        fwrite(&len, 2, 1, f);
        fwrite(name.data(), 1, len, f);
        uint8_t rank = 2;
        fwrite(&rank, 1, 1, f);
        uint32_t dims[2] = {uint32_t(t.n), uint32_t(t.d)};
        fwrite(dims, 4, 2, f);
        fwrite(t.v.data(), 8, t.v.size(), f);
    }
    fclose(f);
}

inline std::map<std::string, Tensor> load_tensors(const std::string& path) {
    FILE* f = fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    uint32_t version;
    if (fread(magic, 1, 4, f) != 4 || memcmp(magic, "FLRW", 4) != 0) {
        fclose(f);
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    if (fread(&version, 4, 1, f) != 1 || version != 1) {
        fclose(f);
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    }
    std::map<std::string, Tensor> out;
    for (;;) {
        uint16_t len;
        size_t got = fread(&len, 2, 1, f);
        if (got == 0) break; // clean EOF
        std::string name(len, '\0');
        uint8_t rank;
        if (fread(name.data(), 1, len, f) != len || fread(&rank, 1, 1, f) != 1 || rank < 1 || rank > 2) {
            fclose(f);
            throw std::runtime_error("checkpoint: truncated record in " + path);
        }
        uint32_t dims[2] = {1, 1};
        if (fread(dims + (rank == 1 ? 1 : 0), 4, rank, f) != rank) {
            fclose(f);
            throw std::runtime_error("checkpoint: truncated dims in " + path);
        }
        Tensor t{int(dims[0]), int(dims[1])};
        if (fread(t.v.data(), 8, t.v.size(), f) != t.v.size()) {
            fclose(f);
            throw std::runtime_error("checkpoint: truncated data in " + path);
        }
        out.emplace(std::move(name), std::move(t));
    }
    fclose(f);
    return out;
}

// MLP (de)serialization: parameters plus an "arch" descriptor tensor.
inline void collect_mlp(std::map<std::string, Tensor>& out, Mlp& net, const std::string& prefix) {
    Tensor arch(1, 10 + int(net.spec.hidden.size()));
    int j = 0;
    arch.v[j++] = net.spec.in;
    arch.v[j++] = net.spec.out;
    arch.v[j++] = double(int(net.spec.out_act));
    arch.v[j++] = double(int(net.spec.enc));
    arch.v[j++] = net.spec.freq_octaves;
    arch.v[j++] = net.spec.grid.levels;
    arch.v[j++] = net.spec.grid.feat;
    arch.v[j++] = net.spec.grid.table_size;
    arch.v[j++] = net.spec.grid.n_min;
    arch.v[j++] = net.spec.grid.n_max;
    for (int h : net.spec.hidden) arch.v[j++] = h;
    out[prefix + "arch"] = std::move(arch);
    auto names = net.param_names(prefix);
    auto params = net.params();
    for (size_t i = 0; i < params.size(); ++i) out[names[i]] = *params[i];
}

inline Mlp load_mlp(const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
    auto it = tensors.find(prefix + "arch");
    if (it == tensors.end()) throw std::runtime_error("checkpoint: missing " + prefix + "arch");
    const Tensor& a = it->second;
    Mlp net;
    int j = 0;
    net.spec.in = int(a.v[j++]);
    net.spec.out = int(a.v[j++]);
    net.spec.out_act = OutAct(int(a.v[j++]));
    net.spec.enc = Encoding(int(a.v[j++]));
    net.spec.freq_octaves = int(a.v[j++]);
    net.spec.grid.levels = int(a.v[j++]);
    net.spec.grid.feat = int(a.v[j++]);
    net.spec.grid.table_size = int(a.v[j++]);
    net.spec.grid.n_min = int(a.v[j++]);
    net.spec.grid.n_max = int(a.v[j++]);
    for (; j < a.d; ++j) net.spec.hidden.push_back(int(a.v[j]));
    net.init(0);
    auto names = net.param_names(prefix);
    auto params = net.params();
    for (size_t i = 0; i < params.size(); ++i) {
        auto pt = tensors.find(names[i]);
        if (pt == tensors.end()) throw std::runtime_error("checkpoint: missing " + names[i]);
        if (pt->second.n != params[i]->n || pt->second.d != params[i]->d)
            throw std::runtime_error("checkpoint: shape mismatch for " + names[i]);
        *params[i] = pt->second;
    }
    return net;
}

} // namespace af::nn
