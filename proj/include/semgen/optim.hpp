#pragma once

#include <cstddef>
#include <vector>

#include "semgen/nn.hpp"

namespace semgen {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Global-norm clip; <= 0 disables.
    double clip_norm = 0.0;
};

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    static AdamState zeros_like(const ParamList &params);
};

// One bias-corrected Adam update over every parameter in `params`, reading
// gradients from the tensors. Parameters without a gradient buffer count as
// zero-gradient. A non-finite gradient aborts before anything is modified.
void adam_step(ParamList &params, AdamState &state, const AdamHyper &hyper);

}  // namespace semgen
