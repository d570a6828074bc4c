#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "semgen/rng.hpp"
#include "semgen/tensor.hpp"

namespace semgen::flow {

// z_t = (1 - t) z0 + t eps
Tensor forward_interpolate(const Tensor &z0, const Tensor &eps, double t);
// d z_t / d t = eps - z0, constant along the straight path.
Tensor cfm_target(const Tensor &z0, const Tensor &eps);

// One training example. `key` seeds the example's own (t, eps) draw, so the
// batch loss does not depend on the order of examples.
struct FlowExample {
    Tensor z0;
    std::uint64_t key = 0;
};

// v_theta(z_t, t) for example `index` of the batch (the closure looks up that
// example's conditioning).
using ConditionalVelocity = std::function<Tensor(const Tensor &z_t, double t, std::size_t index)>;

struct CfmDraw {
    double t = 0.0;
    Tensor eps;
};
// The (t, eps) pair cfm_loss uses for a given key; t ~ U[0, 1).
CfmDraw cfm_draw(std::uint64_t key, const Shape &shape);

// Mean over examples of mean((v_theta - (eps - z0))^2). Non-finite loss is a
// NumericError naming the example and its t.
Tensor cfm_loss(const ConditionalVelocity &model, const std::vector<FlowExample> &batch);

struct SamplerConfig {
    std::size_t steps = 50;
    void validate() const;
    // t_k = 1 - k / N, k = 0..N; strictly decreasing from 1 to 0.
    std::vector<double> grid() const;
};

using VelocityField = std::function<Tensor(const Tensor &z, double t)>;

// Euler integration from t = 1 to t = 0 over the descending grid:
// z <- z + v(z, t_k) * (t_{k+1} - t_k), with the signed step negative.
// A non-finite state raises SamplingError with the step index.
Tensor euler_sample(const VelocityField &model, const Tensor &z1, const SamplerConfig &cfg);
Tensor euler_sample(const VelocityField &model, const Shape &shape, const SamplerConfig &cfg, Rng &rng);

}  // namespace semgen::flow
