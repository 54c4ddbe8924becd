#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "skillnet/errors.hpp"
#include "skillnet/ops.hpp"
#include "skillnet/tape.hpp"

namespace skillnet {

using ScalarFn = std::function<Tensor(const Tensor&)>;

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

// Compares reverse-mode gradients of f at x with central differences
// (f(x+eps) - f(x-eps)) / (2 eps). Relative error per coordinate uses the
// denominator max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport grad_check_report(const ScalarFn& f, const Tensor& x, double eps = 1e-5) {
    if (!(eps > 0)) throw DomainError("grad_check: eps must be positive");
    GradCheckReport report;
    {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor leaf = x.detach();
        leaf.set_requires_grad(true);
        Tensor y = f(leaf);
        if (y.numel() != 1) throw ContractError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
        if (tape.empty()) {
            report.analytic.assign(x.numel(), 0.0);
        } else {
            tape.backward(y);
            report.analytic = leaf.grad();
        }
    }
    Tape::Pause pause;
    report.numeric.resize(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        Tensor plus = x.detach();
        Tensor minus = x.detach();
        plus.mutable_data()[i] += eps;
        minus.mutable_data()[i] -= eps;
        const double fp = f(plus).item();
        const double fm = f(minus).item();
        report.numeric[i] = (fp - fm) / (2.0 * eps);
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double a = report.analytic[i];
        const double n = report.numeric[i];
        const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
        const double err = std::abs(a - n) / denom;
        if (!(err <= report.max_relative_error)) {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    return report;
}

inline double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5) {
    return grad_check_report(f, x, eps).max_relative_error;
}

}  // namespace skillnet
