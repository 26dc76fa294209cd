// Per-vertex deformation fields: expression basis E (n_e x 3), pose
// correctives P (n_j x 9 x 3), skinning weights W (n_j, simplex).
#pragma once

#include <cstddef>
#include <vector>

namespace af {

struct BlendFields {
    int count = 0; // vertices covered
    int n_e = 0;
    int n_j = 0;
    std::vector<double> E; // count * n_e * 3
    std::vector<double> P; // count * n_j * 27, corrective row-major (9 rotation features x 3)
    std::vector<double> W; // count * n_j

    static BlendFields zeros(int count, int n_e, int n_j) {
        BlendFields f;
        f.count = count;
        f.n_e = n_e;
        f.n_j = n_j;
        f.E.assign(size_t(count) * n_e * 3, 0.0);
        f.P.assign(size_t(count) * n_j * 27, 0.0);
        f.W.assign(size_t(count) * n_j, 0.0);
        return f;
    }

    double* e_at(int v) { return &E[size_t(v) * n_e * 3]; }
    const double* e_at(int v) const { return &E[size_t(v) * n_e * 3]; }
    double* p_at(int v) { return &P[size_t(v) * n_j * 27]; }
    const double* p_at(int v) const { return &P[size_t(v) * n_j * 27]; }
    double* w_at(int v) { return &W[size_t(v) * n_j]; }
    const double* w_at(int v) const { return &W[size_t(v) * n_j]; }
};

} // namespace af
