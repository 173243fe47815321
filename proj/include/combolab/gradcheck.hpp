#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "combolab/tape.hpp"
#include "combolab/tensor.hpp"

namespace combolab {

// Builds a scalar graph from a single input node.
using GraphFn = std::function<Var(Tape&, Var)>;

// Central-difference check of the reverse-mode gradient of f at `point`.
// Returns max over coordinates of |analytic - numeric| / max(1, |numeric|).
// The caller is responsible for sampling away from kinks (|x| >~ 1e-3 for
// abs/relu paths); h = 1e-5 balances truncation against cancellation at
// 64-bit.
inline double grad_check(const GraphFn& f, const Tensor& point, double h = 1e-5) {
    Tensor analytic;
    {
        Tape tape;
        Var x = tape.leaf(point);
        Var loss = f(tape, x);
        if (!tape.value(loss).is_scalar())
            throw ContractError("grad_check: graph must produce a scalar");
        tape.backward(loss);
        analytic = tape.grad(x);
    }

    auto eval = [&](const Tensor& p) {
        Tape tape;
        Var x = tape.leaf(p);
        return tape.value(f(tape, x)).item();
    };

    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = eval(probe);
        probe[i] = orig - h;
        const double down = eval(probe);
        probe[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double err =
            std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace combolab
