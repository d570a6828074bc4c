#include "semgen/optim.hpp"

#include <cmath>

#include "semgen/errors.hpp"

namespace semgen {

AdamState AdamState::zeros_like(const ParamList &params) {
    AdamState s;
    for (const auto &p : params) {
        s.m.emplace_back(p.tensor.numel(), 0.0);
        s.v.emplace_back(p.tensor.numel(), 0.0);
    }
    return s;
}

void adam_step(ParamList &params, AdamState &state, const AdamHyper &hyper) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                             " slots for " + std::to_string(params.size()) + " parameters");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto g = params[i].tensor.grad();
        if (state.m[i].size() != params[i].tensor.numel()) {
            throw DimensionError("adam_step: state shape mismatch for " + params[i].name);
        }
        for (double x : g) {
            if (!std::isfinite(x)) {
                throw TrainingAbort("non-finite gradient in parameter '" + params[i].name + "'",
                                    params[i].name, state.step);
            }
            sq += x * x;
        }
    }
    double clip = 1.0;
    if (hyper.clip_norm > 0.0) {
        const double norm = std::sqrt(sq);
        if (norm > hyper.clip_norm) clip = hyper.clip_norm / norm;
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(hyper.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].tensor.mutable_data();
        const auto g = params[i].tensor.grad();
        auto &m = state.m[i];
        auto &v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j] * clip;
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            const double mhat = bc1 > 0.0 ? m[j] / bc1 : m[j];
            const double vhat = bc2 > 0.0 ? v[j] / bc2 : v[j];
            w[j] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

}  // namespace semgen
