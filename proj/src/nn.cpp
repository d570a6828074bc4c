#include "semgen/nn.hpp"

#include <cmath>
#include <cstring>

#include "semgen/hash.hpp"

namespace semgen {

std::size_t param_count(const ParamList &params) {
    std::size_t n = 0;
    for (const auto &p : params) n += p.tensor.numel();
    return n;
}

void zero_grads(ParamList &params) {
    for (auto &p : params) p.tensor.zero_grad();
}

void set_trainable(ParamList &params, bool on) {
    for (auto &p : params) p.tensor.set_requires_grad(on);
}

std::uint64_t param_hash(const ParamList &params) {
    Fnv1a h;
    for (const auto &p : params) {
        h.update(p.name);
        for (double v : p.tensor.data()) {
            const float f = static_cast<float>(v);
            h.update(&f, sizeof f);
        }
    }
    return h.digest();
}

namespace nn {

Linear::Linear(std::size_t in, std::size_t out, Rng &rng, double gain, bool with_bias) {
    const double stddev = gain / std::sqrt(static_cast<double>(in));
    if (gain == 0.0) {
        weight = Tensor({in, out}, true);
    } else {
        weight = Tensor::randn({in, out}, rng, stddev, true);
    }
    if (with_bias) bias = Tensor({out}, true);
}

void Linear::collect(ParamList &out, const std::string &prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

ResidualMlp::ResidualMlp(std::size_t width, std::size_t hidden, Rng &rng)
    : up(width, hidden, rng), down(hidden, width, rng, 0.5) {}

void ResidualMlp::collect(ParamList &out, const std::string &prefix) const {
    up.collect(out, prefix + ".up");
    down.collect(out, prefix + ".down");
}

Embedding::Embedding(std::size_t rows, std::size_t dim, Rng &rng, double stddev)
    : table(Tensor::randn({rows, dim}, rng, stddev, true)) {}

void Embedding::collect(ParamList &out, const std::string &prefix) const {
    out.push_back({prefix, table});
}

}  // namespace nn

}  // namespace semgen
