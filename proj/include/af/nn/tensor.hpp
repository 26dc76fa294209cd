// Dense row-major 2D double tensor plus the three gemm variants the tape
// backward pass needs. Kernels stream rows (axpy style) so the inner loops
// vectorize; accumulation order is fixed for reproducibility.
#pragma once

#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace af::nn {

struct Tensor {
    int n = 0, d = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int d_) : n(n_), d(d_), v(size_t(n_) * d_, 0.0) {}

    static Tensor zeros(int n, int d) { return Tensor(n, d); }
    static Tensor full(int n, int d, double c) {
        Tensor t(n, d);
        std::fill(t.v.begin(), t.v.end(), c);
        return t;
    }
    static Tensor row3(double x, double y, double z) {
        Tensor t(1, 3);
        t.v = {x, y, z};
        return t;
    }

    void resize(int n_, int d_) {
        n = n_;
        d = d_;
        v.resize(size_t(n_) * d_); // keeps capacity across reuse
    }
    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    double& at(int i, int j) { return v[size_t(i) * d + j]; }
    double at(int i, int j) const { return v[size_t(i) * d + j]; }
    double* row(int i) { return &v[size_t(i) * d]; }
    const double* row(int i) const { return &v[size_t(i) * d]; }
    size_t count() const { return v.size(); }

    bool finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

// C (+)= A * B, A [n x k], B [k x m]
inline void gemm_nn(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
    assert(A.d == B.n);
    C.resize(A.n, B.d);
    if (!accumulate) C.zero();
    const int k = A.d, m = B.d;
    for (int i = 0; i < A.n; ++i) {
        double* c = C.row(i);
        const double* a = A.row(i);
        for (int p = 0; p < k; ++p) {
            const double s = a[p];
            if (s == 0.0) continue;
            const double* b = B.row(p);
            for (int j = 0; j < m; ++j) c[j] += s * b[j];
        }
    }
}

// C (+)= A^T * B, A [n x k], B [n x m], C [k x m]
inline void gemm_tn(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
    assert(A.n == B.n);
    C.resize(A.d, B.d);
    if (!accumulate) C.zero();
    const int k = A.d, m = B.d;
    for (int i = 0; i < A.n; ++i) {
        const double* a = A.row(i);
        const double* b = B.row(i);
        for (int p = 0; p < k; ++p) {
            const double s = a[p];
            if (s == 0.0) continue;
            double* c = C.row(p);
            for (int j = 0; j < m; ++j) c[j] += s * b[j];
        }
    }
}

// C (+)= A * B^T, A [n x k], B [m x k], C [n x m]
inline void gemm_nt(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
    assert(A.d == B.d);
    C.resize(A.n, B.n);
    if (!accumulate) C.zero();
    const int k = A.d, m = B.n;
    for (int i = 0; i < A.n; ++i) {
        const double* a = A.row(i);
        double* c = C.row(i);
        for (int p = 0; p < m; ++p) {
            const double* b = B.row(p);
            double s = 0.0;
            for (int j = 0; j < k; ++j) s += a[j] * b[j];
            c[p] += s;
        }
    }
}

} // namespace af::nn
