// General robust kernel rho(x, alpha, c) with explicit log (alpha -> 0) and
// quadratic (alpha = 2) limits. Defined for x >= 0.
#pragma once

#include <cmath>

#include "af/nn/tape.hpp"

namespace af::nn {

inline double barron_robust(double x, double alpha, double c) {
    const double t2 = (x / c) * (x / c);
    if (std::fabs(alpha - 2.0) < 1e-9) return 0.5 * t2;
    if (std::fabs(alpha) < 1e-9) return std::log1p(0.5 * t2);
    const double b = std::fabs(alpha - 2.0);
    return (b / alpha) * (std::pow(t2 / b + 1.0, 0.5 * alpha) - 1.0);
}

// Tape subgraph with the same three branches; x is any [n x d] node, x >= 0.
inline int barron_robust_node(Tape& tape, int x, double alpha, double c) {
    int t2 = tape.scale(tape.mul(x, x), 1.0 / (c * c));
    if (std::fabs(alpha - 2.0) < 1e-9) return tape.scale(t2, 0.5);
    if (std::fabs(alpha) < 1e-9) return tape.log_g(tape.scale(t2, 0.5), 1.0);
    const double b = std::fabs(alpha - 2.0);
    int core = tape.pow_c(tape.add_c(tape.scale(t2, 1.0 / b), 1.0), 0.5 * alpha);
    return tape.scale(tape.add_c(core, -1.0), b / alpha);
}

} // namespace af::nn
