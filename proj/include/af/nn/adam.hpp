// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "af/nn/tensor.hpp"

namespace af::nn {

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<Tensor> m, v;

    void init(const std::vector<Tensor*>& params) {
        t = 0;
        m.clear();
        v.clear();
        for (const Tensor* p : params) {
            m.emplace_back(p->n, p->d);
            v.emplace_back(p->n, p->d);
        }
    }

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, double lr) {
        if (params.size() != m.size() || grads.size() != m.size())
            throw std::runtime_error("adam: state/param count mismatch");
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        for (size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor& g = *grads[k];
            if (g.n != p.n || g.d != p.d) throw std::runtime_error("adam: grad shape mismatch");
            for (size_t i = 0; i < p.v.size(); ++i) {
                double gi = g.v[i];
                m[k].v[i] = beta1 * m[k].v[i] + (1.0 - beta1) * gi;
                v[k].v[i] = beta2 * v[k].v[i] + (1.0 - beta2) * gi * gi;
                p.v[i] -= lr * (m[k].v[i] / bc1) / (std::sqrt(v[k].v[i] / bc2) + eps);
            }
        }
    }
};

} // namespace af::nn
