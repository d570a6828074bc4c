#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "semgen/nn.hpp"
#include "semgen/tensor.hpp"

namespace semgen::testing {

struct GradCheckResult {
    double rel_error = 0.0;
    double analytic_norm = 0.0;
};

// Compares the analytic gradient of `loss()` w.r.t. every tensor in `leaves`
// against central finite differences. The error is norm-wise relative:
// |a - n| / max(|a| + |n|, 1e-12).
inline GradCheckResult grad_check(const std::function<Tensor()> &loss, std::vector<Tensor> leaves,
                                  double h = 1e-5) {
    for (auto &l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    loss().backward();
    std::vector<std::vector<double>> analytic;
    for (auto &l : leaves) {
        auto g = l.grad();
        analytic.emplace_back(l.numel(), 0.0);
        if (!g.empty()) std::copy(g.begin(), g.end(), analytic.back().begin());
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    NoGradGuard guard;
    for (std::size_t t = 0; t < leaves.size(); ++t) {
        auto w = leaves[t].mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double orig = w[i];
            w[i] = orig + h;
            const double fp = loss().item();
            w[i] = orig - h;
            const double fm = loss().item();
            w[i] = orig;
            const double num = (fp - fm) / (2.0 * h);
            const double an = analytic[t][i];
            diff2 += (an - num) * (an - num);
            a2 += an * an;
            n2 += num * num;
        }
    }
    GradCheckResult r;
    r.analytic_norm = std::sqrt(a2);
    r.rel_error = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
    return r;
}

inline GradCheckResult grad_check(const std::function<Tensor()> &loss, const ParamList &params,
                                  double h = 1e-5) {
    std::vector<Tensor> leaves;
    for (const auto &p : params) leaves.push_back(p.tensor);
    return grad_check(loss, leaves, h);
}

}  // namespace semgen::testing
