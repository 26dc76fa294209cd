// ReLU MLP with selectable input encoding and output activation. Hidden
// layers use He-uniform init; the final layer starts at zero so every net
// opens at its neutral output (sigmoid 0.5, linear 0).
#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "af/core/rng.hpp"
#include "af/nn/tape.hpp"

namespace af::nn {

enum class OutAct : int { None = 0, Sigmoid = 1 };
enum class Encoding : int { Raw = 0, Frequency = 1, HashGrid = 2, Ide = 3 };

struct MlpSpec {
    int in = 0; // raw input width (for Ide: the already-encoded width)
    std::vector<int> hidden;
    int out = 0;
    OutAct out_act = OutAct::None;
    Encoding enc = Encoding::Raw;
    int freq_octaves = 6;
    HashGridSpec grid;

    int encoded_in() const {
        switch (enc) {
            case Encoding::Frequency: return 2 * freq_octaves * in;
            case Encoding::HashGrid: return grid.levels * grid.feat;
            default: return in;
        }
    }
};

struct Mlp {
    MlpSpec spec;
    std::vector<Tensor> weights; // W0, b0, W1, b1, ...
    Tensor grid_params;          // hash-grid feature tables, when enabled
    std::shared_ptr<HashGridPayload> grid_payload;

    std::vector<int> leaf_ids; // per-tape bindings, parallel to params()
    int bound_tape_size = -1;

    void init(uint64_t seed) {
        std::vector<int> w;
        w.push_back(spec.encoded_in());
        for (int h : spec.hidden) w.push_back(h);
        w.push_back(spec.out);
        weights.clear();
        Rng rng(splitmix64(seed ^ 0x6d6c7000u));
        for (size_t i = 0; i + 1 < w.size(); ++i) {
            Tensor W(w[i], w[i + 1]);
            Tensor b(1, w[i + 1]);
            bool last = i + 2 == w.size();
            if (!last) {
                double s = std::sqrt(6.0 / w[i]);
                for (auto& x : W.v) x = rng.uniform(-s, s);
            }
            weights.push_back(std::move(W));
            weights.push_back(std::move(b));
        }
        if (spec.enc == Encoding::HashGrid) {
            grid_params.resize(spec.grid.param_rows(), spec.grid.feat);
            for (auto& x : grid_params.v) x = rng.uniform(-1e-4, 1e-4);
            grid_payload = std::make_shared<HashGridPayload>();
            grid_payload->spec = spec.grid;
            grid_payload->res = spec.grid.resolutions();
        }
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> p;
        for (auto& t : weights) p.push_back(&t);
        if (spec.enc == Encoding::HashGrid) p.push_back(&grid_params);
        return p;
    }

    std::vector<std::string> param_names(const std::string& prefix) const {
        std::vector<std::string> names;
        for (size_t i = 0; i < weights.size(); i += 2) {
            names.push_back(prefix + "w" + std::to_string(i / 2));
            names.push_back(prefix + "b" + std::to_string(i / 2));
        }
        if (spec.enc == Encoding::HashGrid) names.push_back(prefix + "grid");
        return names;
    }

    void bind(Tape& tape, bool trainable = true) {
        leaf_ids.clear();
        for (Tensor* p : params()) leaf_ids.push_back(tape.leaf(*p, trainable));
        bound_tape_size = tape.size();
    }

    // x: raw input node (or encoded feature node for Encoding::Ide).
    int forward(Tape& tape, int x, const std::string& name) const {
        if (leaf_ids.empty()) throw std::runtime_error(name + ": forward before bind");
        int h = x;
        switch (spec.enc) {
            case Encoding::Frequency: h = tape.freq_enc(x, spec.freq_octaves); break;
            case Encoding::HashGrid: h = tape.hash_grid(grid_payload, leaf_ids.back(), x); break;
            default: break;
        }
        if (tape.val(h).d != spec.encoded_in())
            throw std::runtime_error(name + ": input width " + std::to_string(tape.val(h).d) +
                                     " != " + std::to_string(spec.encoded_in()));
        const int layers = int(weights.size()) / 2;
        for (int i = 0; i < layers; ++i) {
            h = tape.add_row(tape.matmul(h, leaf_ids[2 * i]), leaf_ids[2 * i + 1]);
            if (i + 1 < layers) h = tape.relu(h);
            tape.check_finite(h, name + ".layer" + std::to_string(i));
        }
        if (spec.out_act == OutAct::Sigmoid) h = tape.sigmoid(h);
        return h;
    }

    // Plain inference without a caller-provided tape.
    Tensor infer(const Tensor& x) {
        Tape tape;
        bind(tape);
        int in = tape.leaf(x);
        return tape.val(forward(tape, in, "mlp"));
    }
};

} // namespace af::nn
