#include "semgen/flow.hpp"

#include <cmath>

#include "semgen/errors.hpp"

namespace semgen::flow {

Tensor forward_interpolate(const Tensor &z0, const Tensor &eps, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("forward_interpolate: t=" + std::to_string(t) + " outside [0, 1]");
    if (z0.shape() != eps.shape()) {
        throw DimensionError("forward_interpolate: z0 " + shape_str(z0.shape()) + " vs eps " + shape_str(eps.shape()));
    }
    return add(scale(z0, 1.0 - t), scale(eps, t));
}

Tensor cfm_target(const Tensor &z0, const Tensor &eps) { return sub(eps, z0); }

CfmDraw cfm_draw(std::uint64_t key, const Shape &shape) {
    Rng rng(key);
    CfmDraw d;
    d.t = rng.uniform();
    d.eps = Tensor::randn(shape, rng);
    return d;
}

Tensor cfm_loss(const ConditionalVelocity &model, const std::vector<FlowExample> &batch) {
    if (batch.empty()) throw ValidationError("cfm_loss: empty batch");
    Tensor total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto &ex = batch[i];
        const CfmDraw d = cfm_draw(ex.key, ex.z0.shape());
        const Tensor zt = forward_interpolate(ex.z0.detach(), d.eps, d.t);
        const Tensor target = cfm_target(ex.z0.detach(), d.eps);
        const Tensor l = mse(model(zt, d.t, i), target);
        if (!std::isfinite(l.item())) {
            throw NumericError("cfm_loss: non-finite loss for batch element " + std::to_string(i) + " (t=" +
                               std::to_string(d.t) + ", numel=" + std::to_string(ex.z0.numel()) + ")");
        }
        total = total.defined() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

void SamplerConfig::validate() const {
    if (steps < 1) throw ConfigError("sampler steps must be >= 1");
}

std::vector<double> SamplerConfig::grid() const {
    validate();
    std::vector<double> g(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) g[k] = 1.0 - static_cast<double>(k) / static_cast<double>(steps);
    g.back() = 0.0;
    return g;
}

Tensor euler_sample(const VelocityField &model, const Tensor &z1, const SamplerConfig &cfg) {
    NoGradGuard ng;
    const auto grid = cfg.grid();
    std::vector<double> z(z1.data().begin(), z1.data().end());
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const double dt = grid[k + 1] - grid[k];
        const Tensor v = model(Tensor(z1.shape(), z), grid[k]);
        if (v.shape() != z1.shape()) {
            throw DimensionError("euler_sample: velocity " + shape_str(v.shape()) + " vs state " + shape_str(z1.shape()));
        }
        const auto vd = v.data();
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] += vd[i] * dt;
            if (!std::isfinite(z[i])) {
                throw SamplingError("euler_sample: non-finite state at step " + std::to_string(k), k);
            }
        }
    }
    return Tensor(z1.shape(), std::move(z));
}

Tensor euler_sample(const VelocityField &model, const Shape &shape, const SamplerConfig &cfg, Rng &rng) {
    return euler_sample(model, Tensor::randn(shape, rng), cfg);
}

}  // namespace semgen::flow
