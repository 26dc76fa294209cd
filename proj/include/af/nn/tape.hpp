// Reverse-mode autodiff over 2D double tensors. Values are computed eagerly
// at node creation (creation order doubles as topological order), backward
// walks the nodes in reverse. reset() keeps node/tensor storage so a training
// loop that rebuilds the same graph shape allocates nothing in steady state.
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <deque>
#include <vector>

#include "af/light/ide.hpp"
#include "af/nn/tensor.hpp"

namespace af::nn {

// out[i,:] = sum_j w[j] * in[idx[j],:] for j in [ptr[i], ptr[i+1]).
// One struct serves gather, scatter-add, neighbor means, barycentric
// interpolation, and pyramid downsampling.
struct CsrMap {
    int out_rows = 0, in_rows = 0;
    std::vector<int> ptr, idx;
    std::vector<double> w;

    void begin() { ptr.assign(1, 0); }
    void entry(int j, double weight) {
        idx.push_back(j);
        w.push_back(weight);
    }
    void end_row() { ptr.push_back(int(idx.size())); }
    void finish(int in_rows_) {
        out_rows = int(ptr.size()) - 1;
        in_rows = in_rows_;
    }
};

// (scale, bias) table over (roughness, cos_theta), samples at texel centers.
struct FgTable {
    int rows = 0, cols = 0; // rows: roughness axis, cols: cos(theta) axis
    std::vector<double> scale, bias;
};

struct HashGridSpec {
    int levels = 8;
    int feat = 2;
    int table_size = 1 << 14; // power of two, per level
    int n_min = 16;
    int n_max = 512;

    std::vector<int> resolutions() const {
        std::vector<int> r(levels);
        double b = levels > 1 ? std::exp(std::log(double(n_max) / n_min) / (levels - 1)) : 1.0;
        for (int l = 0; l < levels; ++l) r[l] = int(std::floor(n_min * std::pow(b, l) + 0.5));
        return r;
    }
    int param_rows() const { return levels * table_size; }
};

struct HashGridPayload {
    HashGridSpec spec;
    std::vector<int> res;
    mutable int64_t clamped = 0; // out-of-range inputs seen (diagnostic)
};

inline uint32_t hashgrid_corner(uint32_t x, uint32_t y, uint32_t z, uint32_t mask) {
    return (x * 1u ^ y * 2654435761u ^ z * 805459861u) & mask;
}

enum class Op : uint8_t {
    Leaf, Add, Sub, Mul, Div, Scale, AddC, PowC, MaxC,
    Relu, Sigmoid, Exp, LogG, SqrtG, Sin, Cos, Abs,
    Matmul, AddRow, RowScale, RowDiv, RowSum, ColSum, Sum, Mean,
    RowDot, RowNormalize, Cross3, ConcatCols, SliceCols,
    Csr, FreqEnc, ShIde, FgLookup, HashGrid, SrgbToLinear
};

class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        int a = -1, b = -1;
        double c0 = 0.0, c1 = 0.0;
        int i0 = 0, i1 = 0;
        bool ng = false; // needs grad (self or any input)
        std::shared_ptr<const void> payload;
        Tensor val, grad;
    };

    void reset() { live_ = 0; }
    int size() const { return live_; }

    const Tensor& val(int id) const { return nodes_[id].val; }
    const Tensor& grad(int id) const { return nodes_[id].grad; }

    void check_finite(int id, const std::string& name) const {
        if (!nodes_[id].val.finite())
            throw std::runtime_error("non-finite values in " + name);
    }

    int leaf(const Tensor& t, bool needs_grad = false) {
        int id = push(Op::Leaf, -1, -1, needs_grad);
        nodes_[id].val = t;
        return id;
    }
    int leaf_full(int n, int d, double c, bool needs_grad = false) {
        int id = push(Op::Leaf, -1, -1, needs_grad);
        nodes_[id].val.resize(n, d);
        std::fill(nodes_[id].val.v.begin(), nodes_[id].val.v.end(), c);
        return id;
    }

    int add(int a, int b) { return ew2(Op::Add, a, b); }
    int sub(int a, int b) { return ew2(Op::Sub, a, b); }
    int mul(int a, int b) { return ew2(Op::Mul, a, b); }
    int divide(int a, int b) { return ew2(Op::Div, a, b); }

    int scale(int a, double c) { return ew1(Op::Scale, a, c); }
    int add_c(int a, double c) { return ew1(Op::AddC, a, c); }
    int pow_c(int a, double c) { return ew1(Op::PowC, a, c); }
    int max_c(int a, double c) { return ew1(Op::MaxC, a, c); }
    int relu(int a) { return ew1(Op::Relu, a); }
    int sigmoid(int a) { return ew1(Op::Sigmoid, a); }
    int exp(int a) { return ew1(Op::Exp, a); }
    int log_g(int a, double eps) { return ew1(Op::LogG, a, eps); }
    int sqrt_g(int a, double eps) { return ew1(Op::SqrtG, a, eps); }
    int sin(int a) { return ew1(Op::Sin, a); }
    int cos(int a) { return ew1(Op::Cos, a); }
    int abs(int a) { return ew1(Op::Abs, a); }
    int srgb_to_linear(int a) { return ew1(Op::SrgbToLinear, a); }

    int matmul(int a, int b) {
        require(nodes_[a].val.d == nodes_[b].val.n, "matmul shape");
        int id = push(Op::Matmul, a, b);
        gemm_nn(nodes_[a].val, nodes_[b].val, nodes_[id].val, false);
        return id;
    }

    int add_row(int a, int brow) {
        const Tensor& A = nodes_[a].val;
        const Tensor& B = nodes_[brow].val;
        require(B.n == 1 && B.d == A.d, "add_row shape");
        int id = push(Op::AddRow, a, brow);
        Tensor& o = out(id, A.n, A.d);
        for (int i = 0; i < A.n; ++i)
            for (int j = 0; j < A.d; ++j) o.at(i, j) = A.at(i, j) + B.at(0, j);
        return id;
    }

    int row_scale(int a, int b) {
        const Tensor& A = nodes_[a].val;
        const Tensor& B = nodes_[b].val;
        require(B.n == A.n && B.d == 1, "row_scale shape");
        int id = push(Op::RowScale, a, b);
        Tensor& o = out(id, A.n, A.d);
        for (int i = 0; i < A.n; ++i) {
            double s = B.at(i, 0);
            for (int j = 0; j < A.d; ++j) o.at(i, j) = A.at(i, j) * s;
        }
        return id;
    }

    int row_div(int a, int b) {
        const Tensor& A = nodes_[a].val;
        const Tensor& B = nodes_[b].val;
        require(B.n == A.n && B.d == 1, "row_div shape");
        int id = push(Op::RowDiv, a, b);
        Tensor& o = out(id, A.n, A.d);
        for (int i = 0; i < A.n; ++i) {
            double s = 1.0 / B.at(i, 0);
            for (int j = 0; j < A.d; ++j) o.at(i, j) = A.at(i, j) * s;
        }
        return id;
    }

    int row_sum(int a) {
        const Tensor& A = nodes_[a].val;
        int id = push(Op::RowSum, a);
        Tensor& o = out(id, A.n, 1);
        for (int i = 0; i < A.n; ++i) {
            double s = 0.0;
            for (int j = 0; j < A.d; ++j) s += A.at(i, j);
            o.at(i, 0) = s;
        }
        return id;
    }

    int col_sum(int a) {
        const Tensor& A = nodes_[a].val;
        int id = push(Op::ColSum, a);
        Tensor& o = out(id, 1, A.d);
        o.zero();
        for (int i = 0; i < A.n; ++i)
            for (int j = 0; j < A.d; ++j) o.at(0, j) += A.at(i, j);
        return id;
    }

    int sum(int a) {
        int id = push(Op::Sum, a);
        Tensor& o = out(id, 1, 1);
        double s = 0.0;
        for (double x : nodes_[a].val.v) s += x;
        o.at(0, 0) = s;
        return id;
    }

    int mean(int a) {
        int id = push(Op::Mean, a);
        Tensor& o = out(id, 1, 1);
        double s = 0.0;
        for (double x : nodes_[a].val.v) s += x;
        o.at(0, 0) = nodes_[a].val.count() ? s / double(nodes_[a].val.count()) : 0.0;
        return id;
    }

    int row_dot(int a, int b) {
        const Tensor& A = nodes_[a].val;
        const Tensor& B = nodes_[b].val;
        require(A.n == B.n && A.d == B.d, "row_dot shape");
        int id = push(Op::RowDot, a, b);
        Tensor& o = out(id, A.n, 1);
        for (int i = 0; i < A.n; ++i) {
            double s = 0.0;
            for (int j = 0; j < A.d; ++j) s += A.at(i, j) * B.at(i, j);
            o.at(i, 0) = s;
        }
        return id;
    }

    int row_normalize(int a, double eps = 1e-20) {
        const Tensor& A = nodes_[a].val;
        int id = push(Op::RowNormalize, a);
        nodes_[id].c0 = eps;
        Tensor& o = out(id, A.n, A.d);
        for (int i = 0; i < A.n; ++i) {
            double s = eps;
            for (int j = 0; j < A.d; ++j) s += A.at(i, j) * A.at(i, j);
            double inv = 1.0 / std::sqrt(s);
            for (int j = 0; j < A.d; ++j) o.at(i, j) = A.at(i, j) * inv;
        }
        return id;
    }

    int cross3(int a, int b) {
        const Tensor& A = nodes_[a].val;
        const Tensor& B = nodes_[b].val;
        require(A.d == 3 && B.d == 3 && A.n == B.n, "cross3 shape");
        int id = push(Op::Cross3, a, b);
        Tensor& o = out(id, A.n, 3);
        for (int i = 0; i < A.n; ++i) {
            const double* u = A.row(i);
            const double* v = B.row(i);
            double* w = o.row(i);
            w[0] = u[1] * v[2] - u[2] * v[1];
            w[1] = u[2] * v[0] - u[0] * v[2];
            w[2] = u[0] * v[1] - u[1] * v[0];
        }
        return id;
    }

    int concat_cols(int a, int b) {
        const Tensor& A = nodes_[a].val;
        const Tensor& B = nodes_[b].val;
        require(A.n == B.n, "concat_cols shape");
        int id = push(Op::ConcatCols, a, b);
        Tensor& o = out(id, A.n, A.d + B.d);
        for (int i = 0; i < A.n; ++i) {
            std::memcpy(o.row(i), A.row(i), sizeof(double) * A.d);
            std::memcpy(o.row(i) + A.d, B.row(i), sizeof(double) * B.d);
        }
        return id;
    }

    int slice_cols(int a, int begin, int end) {
        const Tensor& A = nodes_[a].val;
        require(0 <= begin && begin < end && end <= A.d, "slice_cols range");
        int id = push(Op::SliceCols, a);
        nodes_[id].i0 = begin;
        nodes_[id].i1 = end;
        Tensor& o = out(id, A.n, end - begin);
        for (int i = 0; i < A.n; ++i)
            std::memcpy(o.row(i), A.row(i) + begin, sizeof(double) * (end - begin));
        return id;
    }

    int csr(const std::shared_ptr<const CsrMap>& map, int a) {
        const Tensor& A = nodes_[a].val;
        require(A.n == map->in_rows, "csr input rows");
        int id = push(Op::Csr, a);
        nodes_[id].payload = map;
        Tensor& o = out(id, map->out_rows, A.d);
        o.zero();
        for (int i = 0; i < map->out_rows; ++i) {
            double* dst = o.row(i);
            for (int e = map->ptr[i]; e < map->ptr[i + 1]; ++e) {
                const double wgt = map->w[e];
                const double* src = A.row(map->idx[e]);
                for (int j = 0; j < A.d; ++j) dst[j] += wgt * src[j];
            }
        }
        return id;
    }

    // [n x d] -> [n x 2Kd]; per octave k: sin(2^k pi x) block then cos block.
    int freq_enc(int a, int K) {
        const Tensor& A = nodes_[a].val;
        int id = push(Op::FreqEnc, a);
        nodes_[id].i0 = K;
        Tensor& o = out(id, A.n, 2 * K * A.d);
        for (int i = 0; i < A.n; ++i) {
            const double* x = A.row(i);
            double* y = o.row(i);
            for (int k = 0; k < K; ++k) {
                double f = std::ldexp(kPi, k);
                for (int j = 0; j < A.d; ++j) {
                    y[(2 * k) * A.d + j] = std::sin(f * x[j]);
                    y[(2 * k + 1) * A.d + j] = std::cos(f * x[j]);
                }
            }
        }
        return id;
    }

    // dir [n x 3], roughness [n x 1] -> attenuated SH features [n x 67].
    int sh_ide(int dir, int r) {
        const Tensor& D = nodes_[dir].val;
        const Tensor& R = nodes_[r].val;
        require(D.d == 3 && R.n == D.n && R.d == 1, "sh_ide shape");
        int id = push(Op::ShIde, dir, r);
        Tensor& o = out(id, D.n, kIdeFeatureLen);
        double Y[sh_count(kShMaxBand)];
        for (int i = 0; i < D.n; ++i) {
            const double* p = D.row(i);
            sh_eval_grad(p[0], p[1], p[2], kShMaxBand, Y);
            double* dst = o.row(i);
            int j = 0;
            for (int l : kIdeBands) {
                double a = ide_band_attenuation(l, R.at(i, 0));
                for (int m = -l; m <= l; ++m) dst[j++] = a * Y[sh_index(l, m)];
            }
        }
        return id;
    }

    // roughness [n x 1], cos_theta [n x 1] -> (scale, bias) [n x 2].
    int fg_lookup(const std::shared_ptr<const FgTable>& lut, int r, int ct) {
        const Tensor& R = nodes_[r].val;
        const Tensor& C = nodes_[ct].val;
        require(R.d == 1 && C.d == 1 && R.n == C.n, "fg_lookup shape");
        int id = push(Op::FgLookup, r, ct);
        nodes_[id].payload = lut;
        Tensor& o = out(id, R.n, 2);
        for (int i = 0; i < R.n; ++i) {
            double sv, bv;
            fg_bilinear(*lut, R.at(i, 0), C.at(i, 0), sv, bv, nullptr, nullptr, nullptr, nullptr);
            o.at(i, 0) = sv;
            o.at(i, 1) = bv;
        }
        return id;
    }

    // params [levels*T x F], x [n x 3] in [0,1]^3 -> [n x levels*F].
    int hash_grid(const std::shared_ptr<const HashGridPayload>& hg, int params, int x) {
        const Tensor& P = nodes_[params].val;
        const Tensor& X = nodes_[x].val;
        const auto& s = hg->spec;
        require(P.n == s.param_rows() && P.d == s.feat && X.d == 3, "hash_grid shape");
        int id = push(Op::HashGrid, params, x);
        nodes_[id].payload = hg;
        Tensor& o = out(id, X.n, s.levels * s.feat);
        o.zero();
        const uint32_t mask = uint32_t(s.table_size - 1);
        for (int i = 0; i < X.n; ++i) {
            double* dst = o.row(i);
            for (int l = 0; l < s.levels; ++l) {
                int base = l * s.table_size;
                int c[3];
                double f[3];
                grid_coords(hg.get(), X.row(i), l, c, f);
                for (int corner = 0; corner < 8; ++corner) {
                    int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
                    double wgt = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
                    uint32_t row = hashgrid_corner(uint32_t(c[0] + dx), uint32_t(c[1] + dy), uint32_t(c[2] + dz), mask);
                    const double* feat = P.row(base + int(row));
                    for (int j = 0; j < s.feat; ++j) dst[l * s.feat + j] += wgt * feat[j];
                }
            }
        }
        return id;
    }

    void backward(int loss) {
        require(nodes_[loss].val.n == 1 && nodes_[loss].val.d == 1, "backward needs scalar loss");
        for (int id = 0; id <= loss; ++id) {
            Node& n = nodes_[id];
            if (!n.ng) continue;
            n.grad.resize(n.val.n, n.val.d);
            n.grad.zero();
        }
        nodes_[loss].grad.at(0, 0) = 1.0;
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.ng || n.op == Op::Leaf) continue;
            backward_node(n);
        }
    }

    // Scalar lookup with the same clamped-bilinear rule as the FgLookup op.
    static void fg_sample(const FgTable& t, double r, double ct, double& sv, double& bv) {
        fg_bilinear(t, r, ct, sv, bv, nullptr, nullptr, nullptr, nullptr);
    }

private:
    // deque: push() must not invalidate Tensor references held across it by ops.
    std::deque<Node> nodes_;
    int live_ = 0;

    static void require(bool ok, const char* what) {
        if (!ok) throw std::runtime_error(std::string("tape: ") + what);
    }

    int push(Op op, int a, int b = -1, bool leaf_ng = false) {
        if (live_ == int(nodes_.size())) nodes_.emplace_back();
        Node& n = nodes_[live_];
        n.op = op;
        n.a = a;
        n.b = b;
        n.c0 = n.c1 = 0.0;
        n.i0 = n.i1 = 0;
        n.payload.reset();
        n.ng = op == Op::Leaf ? leaf_ng
                              : ((a >= 0 && nodes_[a].ng) || (b >= 0 && nodes_[b].ng));
        return live_++;
    }

    Tensor& out(int id, int n, int d) {
        nodes_[id].val.resize(n, d);
        return nodes_[id].val;
    }

    int ew2(Op op, int a, int b) {
        const Tensor& A = nodes_[a].val;
        const Tensor& B = nodes_[b].val;
        require(A.n == B.n && A.d == B.d, "elementwise shape");
        int id = push(op, a, b);
        Tensor& o = out(id, A.n, A.d);
        const size_t c = A.count();
        switch (op) {
            case Op::Add: for (size_t i = 0; i < c; ++i) o.v[i] = A.v[i] + B.v[i]; break;
            case Op::Sub: for (size_t i = 0; i < c; ++i) o.v[i] = A.v[i] - B.v[i]; break;
            case Op::Mul: for (size_t i = 0; i < c; ++i) o.v[i] = A.v[i] * B.v[i]; break;
            case Op::Div: for (size_t i = 0; i < c; ++i) o.v[i] = A.v[i] / B.v[i]; break;
            default: require(false, "ew2 op");
        }
        return id;
    }

    int ew1(Op op, int a, double c0 = 0.0) {
        const Tensor& A = nodes_[a].val;
        int id = push(op, a);
        nodes_[id].c0 = c0;
        Tensor& o = out(id, A.n, A.d);
        const size_t c = A.count();
        switch (op) {
            case Op::Scale: for (size_t i = 0; i < c; ++i) o.v[i] = c0 * A.v[i]; break;
            case Op::AddC: for (size_t i = 0; i < c; ++i) o.v[i] = A.v[i] + c0; break;
            case Op::PowC: for (size_t i = 0; i < c; ++i) o.v[i] = std::pow(A.v[i], c0); break;
            case Op::MaxC: for (size_t i = 0; i < c; ++i) o.v[i] = A.v[i] > c0 ? A.v[i] : c0; break;
            case Op::Relu: for (size_t i = 0; i < c; ++i) o.v[i] = A.v[i] > 0 ? A.v[i] : 0.0; break;
            case Op::Sigmoid: for (size_t i = 0; i < c; ++i) o.v[i] = 1.0 / (1.0 + std::exp(-A.v[i])); break;
            case Op::Exp: for (size_t i = 0; i < c; ++i) o.v[i] = std::exp(A.v[i]); break;
            case Op::LogG: for (size_t i = 0; i < c; ++i) o.v[i] = std::log(A.v[i] + c0); break;
            case Op::SqrtG: for (size_t i = 0; i < c; ++i) o.v[i] = std::sqrt(A.v[i] + c0); break;
            case Op::Sin: for (size_t i = 0; i < c; ++i) o.v[i] = std::sin(A.v[i]); break;
            case Op::Cos: for (size_t i = 0; i < c; ++i) o.v[i] = std::cos(A.v[i]); break;
            case Op::Abs: for (size_t i = 0; i < c; ++i) o.v[i] = std::fabs(A.v[i]); break;
            case Op::SrgbToLinear:
                for (size_t i = 0; i < c; ++i) {
                    double x = A.v[i];
                    o.v[i] = x <= 0.04045 ? x / 12.92 : std::pow((x + 0.055) / 1.055, 2.4);
                }
                break;
            default: require(false, "ew1 op");
        }
        return id;
    }

    static void grid_coords(const HashGridPayload* hg, const double* x,
                            int level, int* c, double* f) {
        int N = hg->res[level];
        for (int k = 0; k < 3; ++k) {
            double v = x[k];
            if (v < 0.0 || v > 1.0) {
                ++hg->clamped;
                v = v < 0.0 ? 0.0 : 1.0;
            }
            double p = v * N;
            int ci = int(p);
            if (ci > N - 1) ci = N - 1;
            c[k] = ci;
            f[k] = p - ci;
        }
    }

    // Clamped bilinear over texel centers: coordinate u in [0,1] maps to
    // fractional texel u*N - 0.5. Optionally returns value slopes d/du.
    static void fg_bilinear(const FgTable& t, double r, double ct, double& sv, double& bv,
                            double* ds_dr, double* ds_dc, double* db_dr, double* db_dc) {
        auto locate = [](double u, int n, int& i0, double& f, double& slope_scale) {
            double p = u * n - 0.5;
            slope_scale = double(n);
            if (p <= 0.0) { i0 = 0; f = 0.0; slope_scale = 0.0; }
            else if (p >= n - 1) { i0 = n - 2; f = 1.0; slope_scale = 0.0; }
            else { i0 = int(p); f = p - i0; }
            if (n == 1) { i0 = 0; f = 0.0; slope_scale = 0.0; }
        };
        int ri, ci;
        double rf, cf, rs, cs;
        locate(r, t.rows, ri, rf, rs);
        locate(ct, t.cols, ci, cf, cs);
        auto cell = [&](const std::vector<double>& g, double& val, double* d_dr, double* d_dc) {
            double v00 = g[size_t(ri) * t.cols + ci], v01 = g[size_t(ri) * t.cols + ci + 1];
            double v10 = g[size_t(ri + 1) * t.cols + ci], v11 = g[size_t(ri + 1) * t.cols + ci + 1];
            double a = v00 * (1 - cf) + v01 * cf;
            double b = v10 * (1 - cf) + v11 * cf;
            val = a * (1 - rf) + b * rf;
            if (d_dr) *d_dr = (b - a) * rs;
            if (d_dc) *d_dc = ((v01 - v00) * (1 - rf) + (v11 - v10) * rf) * cs;
        };
        cell(t.scale, sv, ds_dr, ds_dc);
        cell(t.bias, bv, db_dr, db_dc);
    }

    void backward_node(Node& n) {
        Tensor& g = n.grad;
        Node* A = n.a >= 0 ? &nodes_[n.a] : nullptr;
        Node* B = n.b >= 0 ? &nodes_[n.b] : nullptr;
        const bool ga = A && A->ng;
        const bool gb = B && B->ng;
        const size_t c = n.val.count();
        switch (n.op) {
            case Op::Add:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i];
                if (gb) for (size_t i = 0; i < c; ++i) B->grad.v[i] += g.v[i];
                break;
            case Op::Sub:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i];
                if (gb) for (size_t i = 0; i < c; ++i) B->grad.v[i] -= g.v[i];
                break;
            case Op::Mul:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i] * B->val.v[i];
                if (gb) for (size_t i = 0; i < c; ++i) B->grad.v[i] += g.v[i] * A->val.v[i];
                break;
            case Op::Div:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i] / B->val.v[i];
                if (gb) for (size_t i = 0; i < c; ++i) B->grad.v[i] -= g.v[i] * n.val.v[i] / B->val.v[i];
                break;
            case Op::Scale:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += n.c0 * g.v[i];
                break;
            case Op::AddC:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i];
                break;
            case Op::PowC:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += n.c0 * n.val.v[i] / A->val.v[i] * g.v[i];
                break;
            case Op::MaxC:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += A->val.v[i] > n.c0 ? g.v[i] : 0.0;
                break;
            case Op::Relu:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += A->val.v[i] > 0 ? g.v[i] : 0.0;
                break;
            case Op::Sigmoid:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i] * n.val.v[i] * (1.0 - n.val.v[i]);
                break;
            case Op::Exp:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i] * n.val.v[i];
                break;
            case Op::LogG:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i] / (A->val.v[i] + n.c0);
                break;
            case Op::SqrtG:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += 0.5 * g.v[i] / n.val.v[i];
                break;
            case Op::Sin:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i] * std::cos(A->val.v[i]);
                break;
            case Op::Cos:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] -= g.v[i] * std::sin(A->val.v[i]);
                break;
            case Op::Abs:
                if (ga) for (size_t i = 0; i < c; ++i) {
                    double x = A->val.v[i];
                    A->grad.v[i] += x > 0 ? g.v[i] : (x < 0 ? -g.v[i] : 0.0);
                }
                break;
            case Op::SrgbToLinear:
                if (ga) for (size_t i = 0; i < c; ++i) {
                    double x = A->val.v[i];
                    double d = x <= 0.04045 ? 1.0 / 12.92
                                            : (2.4 / 1.055) * std::pow((x + 0.055) / 1.055, 1.4);
                    A->grad.v[i] += g.v[i] * d;
                }
                break;
            case Op::Matmul:
                if (ga) gemm_nt(g, B->val, A->grad, true);
                if (gb) gemm_tn(A->val, g, B->grad, true);
                break;
            case Op::AddRow:
                if (ga) for (size_t i = 0; i < c; ++i) A->grad.v[i] += g.v[i];
                if (gb)
                    for (int i = 0; i < g.n; ++i)
                        for (int j = 0; j < g.d; ++j) B->grad.at(0, j) += g.at(i, j);
                break;
            case Op::RowScale:
                for (int i = 0; i < g.n; ++i) {
                    double s = B->val.at(i, 0);
                    double acc = 0.0;
                    for (int j = 0; j < g.d; ++j) {
                        if (ga) A->grad.at(i, j) += g.at(i, j) * s;
                        acc += g.at(i, j) * A->val.at(i, j);
                    }
                    if (gb) B->grad.at(i, 0) += acc;
                }
                break;
            case Op::RowDiv:
                for (int i = 0; i < g.n; ++i) {
                    double inv = 1.0 / B->val.at(i, 0);
                    double acc = 0.0;
                    for (int j = 0; j < g.d; ++j) {
                        if (ga) A->grad.at(i, j) += g.at(i, j) * inv;
                        acc += g.at(i, j) * n.val.at(i, j);
                    }
                    if (gb) B->grad.at(i, 0) -= acc * inv;
                }
                break;
            case Op::RowSum:
                if (ga)
                    for (int i = 0; i < A->val.n; ++i)
                        for (int j = 0; j < A->val.d; ++j) A->grad.at(i, j) += g.at(i, 0);
                break;
            case Op::ColSum:
                if (ga)
                    for (int i = 0; i < A->val.n; ++i)
                        for (int j = 0; j < A->val.d; ++j) A->grad.at(i, j) += g.at(0, j);
                break;
            case Op::Sum:
                if (ga) for (size_t i = 0; i < A->val.count(); ++i) A->grad.v[i] += g.at(0, 0);
                break;
            case Op::Mean:
                if (ga) {
                    double s = g.at(0, 0) / double(A->val.count());
                    for (size_t i = 0; i < A->val.count(); ++i) A->grad.v[i] += s;
                }
                break;
            case Op::RowDot:
                for (int i = 0; i < A->val.n; ++i) {
                    double s = g.at(i, 0);
                    for (int j = 0; j < A->val.d; ++j) {
                        if (ga) A->grad.at(i, j) += s * B->val.at(i, j);
                        if (gb) B->grad.at(i, j) += s * A->val.at(i, j);
                    }
                }
                break;
            case Op::RowNormalize:
                if (ga)
                    for (int i = 0; i < A->val.n; ++i) {
                        double s2 = n.c0;
                        double xg = 0.0;
                        for (int j = 0; j < A->val.d; ++j) {
                            s2 += A->val.at(i, j) * A->val.at(i, j);
                            xg += A->val.at(i, j) * g.at(i, j);
                        }
                        double inv = 1.0 / std::sqrt(s2);
                        double inv3 = inv * inv * inv;
                        for (int j = 0; j < A->val.d; ++j)
                            A->grad.at(i, j) += g.at(i, j) * inv - A->val.at(i, j) * xg * inv3;
                    }
                break;
            case Op::Cross3:
                for (int i = 0; i < n.val.n; ++i) {
                    const double* u = A->val.row(i);
                    const double* v = B->val.row(i);
                    const double* gr = g.row(i);
                    if (ga) { // dA = B x g
                        A->grad.at(i, 0) += v[1] * gr[2] - v[2] * gr[1];
                        A->grad.at(i, 1) += v[2] * gr[0] - v[0] * gr[2];
                        A->grad.at(i, 2) += v[0] * gr[1] - v[1] * gr[0];
                    }
                    if (gb) { // dB = g x A
                        B->grad.at(i, 0) += gr[1] * u[2] - gr[2] * u[1];
                        B->grad.at(i, 1) += gr[2] * u[0] - gr[0] * u[2];
                        B->grad.at(i, 2) += gr[0] * u[1] - gr[1] * u[0];
                    }
                }
                break;
            case Op::ConcatCols:
                for (int i = 0; i < n.val.n; ++i) {
                    if (ga)
                        for (int j = 0; j < A->val.d; ++j) A->grad.at(i, j) += g.at(i, j);
                    if (gb)
                        for (int j = 0; j < B->val.d; ++j) B->grad.at(i, j) += g.at(i, A->val.d + j);
                }
                break;
            case Op::SliceCols:
                if (ga)
                    for (int i = 0; i < n.val.n; ++i)
                        for (int j = 0; j < n.val.d; ++j) A->grad.at(i, n.i0 + j) += g.at(i, j);
                break;
            case Op::Csr:
                if (ga) {
                    const auto* map = static_cast<const CsrMap*>(n.payload.get());
                    for (int i = 0; i < map->out_rows; ++i) {
                        const double* gr = g.row(i);
                        for (int e = map->ptr[i]; e < map->ptr[i + 1]; ++e) {
                            double wgt = map->w[e];
                            double* dst = A->grad.row(map->idx[e]);
                            for (int j = 0; j < g.d; ++j) dst[j] += wgt * gr[j];
                        }
                    }
                }
                break;
            case Op::FreqEnc:
                if (ga) {
                    int K = n.i0, d = A->val.d;
                    for (int i = 0; i < A->val.n; ++i) {
                        const double* y = n.val.row(i);
                        const double* gr = g.row(i);
                        double* dst = A->grad.row(i);
                        for (int k = 0; k < K; ++k) {
                            double f = std::ldexp(kPi, k);
                            for (int j = 0; j < d; ++j) {
                                double sv = y[(2 * k) * d + j], cv = y[(2 * k + 1) * d + j];
                                dst[j] += f * (cv * gr[(2 * k) * d + j] - sv * gr[(2 * k + 1) * d + j]);
                            }
                        }
                    }
                }
                break;
            case Op::ShIde: {
                constexpr int NY = sh_count(kShMaxBand);
                double Y[NY], dYx[NY], dYy[NY], dYz[NY];
                for (int i = 0; i < A->val.n; ++i) {
                    const double* p = A->val.row(i);
                    sh_eval_grad(p[0], p[1], p[2], kShMaxBand, Y, dYx, dYy, dYz);
                    const double r = B->val.at(i, 0);
                    const double* gr = g.row(i);
                    double gx = 0, gy = 0, gz = 0, grr = 0;
                    int j = 0;
                    for (int l : kIdeBands) {
                        double a = ide_band_attenuation(l, r);
                        double da = -0.5 * l * (l + 1) * a;
                        for (int m = -l; m <= l; ++m, ++j) {
                            int yi = sh_index(l, m);
                            gx += gr[j] * a * dYx[yi];
                            gy += gr[j] * a * dYy[yi];
                            gz += gr[j] * a * dYz[yi];
                            grr += gr[j] * da * Y[yi];
                        }
                    }
                    if (ga) {
                        A->grad.at(i, 0) += gx;
                        A->grad.at(i, 1) += gy;
                        A->grad.at(i, 2) += gz;
                    }
                    if (gb) B->grad.at(i, 0) += grr;
                }
                break;
            }
            case Op::FgLookup: {
                const auto* lut = static_cast<const FgTable*>(n.payload.get());
                for (int i = 0; i < n.val.n; ++i) {
                    double sv, bv, dsr, dsc, dbr, dbc;
                    fg_bilinear(*lut, A->val.at(i, 0), B->val.at(i, 0), sv, bv, &dsr, &dsc, &dbr, &dbc);
                    if (ga) A->grad.at(i, 0) += g.at(i, 0) * dsr + g.at(i, 1) * dbr;
                    if (gb) B->grad.at(i, 0) += g.at(i, 0) * dsc + g.at(i, 1) * dbc;
                }
                break;
            }
            case Op::HashGrid: {
                const auto* hg = static_cast<const HashGridPayload*>(n.payload.get());
                const auto& s = hg->spec;
                const uint32_t mask = uint32_t(s.table_size - 1);
                for (int i = 0; i < B->val.n; ++i) {
                    const double* gr = g.row(i);
                    for (int l = 0; l < s.levels; ++l) {
                        int base = l * s.table_size;
                        int ci[3];
                        double f[3];
                        grid_coords(hg, B->val.row(i), l, ci, f);
                        double slope[3] = {0, 0, 0};
                        for (int corner = 0; corner < 8; ++corner) {
                            int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
                            double wx = dx ? f[0] : 1 - f[0];
                            double wy = dy ? f[1] : 1 - f[1];
                            double wz = dz ? f[2] : 1 - f[2];
                            uint32_t row = hashgrid_corner(uint32_t(ci[0] + dx), uint32_t(ci[1] + dy),
                                                           uint32_t(ci[2] + dz), mask);
                            double gdotf = 0.0;
                            const double* feat = A->val.row(base + int(row));
                            for (int j = 0; j < s.feat; ++j) {
                                double gj = gr[l * s.feat + j];
                                gdotf += gj * feat[j];
                                if (ga) A->grad.at(base + int(row), j) += wx * wy * wz * gj;
                            }
                            slope[0] += (dx ? 1.0 : -1.0) * wy * wz * gdotf;
                            slope[1] += (dy ? 1.0 : -1.0) * wx * wz * gdotf;
                            slope[2] += (dz ? 1.0 : -1.0) * wx * wy * gdotf;
                        }
                        if (gb) {
                            int N = hg->res[l];
                            const double* xv = B->val.row(i);
                            for (int k = 0; k < 3; ++k) {
                                bool interior = xv[k] > 0.0 && xv[k] < 1.0;
                                if (interior) B->grad.at(i, k) += slope[k] * N;
                            }
                        }
                    }
                }
                break;
            }
            case Op::Leaf:
            default:
                break;
        }
    }
};

} // namespace af::nn
