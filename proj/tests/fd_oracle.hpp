#pragma once

// Test-side finite-difference oracle. It only ever evaluates forward passes,
// so it stays independent of Tape::backward, the path it is used to check.

#include <combolab/tensor.hpp>

namespace testutil {

template <class EvalFn>
combolab::Tensor numeric_grad(EvalFn f, const combolab::Tensor& point,
                              double h = 1e-5) {
    combolab::Tensor grad(point.shape());
    combolab::Tensor probe = point;
    for (std::size_t i = 0; i < point.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = f(probe);
        probe[i] = orig - h;
        const double down = f(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

template <class EvalFn>
double max_rel_grad_err(const combolab::Tensor& analytic, EvalFn f,
                        const combolab::Tensor& point, double h = 1e-5) {
    combolab::Tensor numeric = numeric_grad(f, point, h);
    double worst = 0.0;
    for (std::size_t i = 0; i < numeric.numel(); ++i) {
        double err = std::fabs(analytic[i] - numeric[i]) /
                     std::max(1.0, std::fabs(numeric[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace testutil
