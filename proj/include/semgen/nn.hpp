#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "semgen/rng.hpp"
#include "semgen/tensor.hpp"

namespace semgen {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

// Sum of element counts.
std::size_t param_count(const ParamList &params);
void zero_grads(ParamList &params);
void set_trainable(ParamList &params, bool on);
// Stable 64-bit digest of the float32-rounded values, used by freeze checks.
std::uint64_t param_hash(const ParamList &params);

namespace nn {

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Linear() = default;
    // Weights ~ N(0, gain^2 / in); `gain == 0` gives an all-zero layer.
    Linear(std::size_t in, std::size_t out, Rng &rng, double gain = 1.0, bool with_bias = true);

    Tensor operator()(const Tensor &x) const { return linear(x, weight, bias); }
    std::size_t in_features() const { return weight.rows(); }
    std::size_t out_features() const { return weight.cols(); }
    void collect(ParamList &out, const std::string &prefix) const;
};

// x + W2 silu(W1 x): the residual MLP block used by the per-token models.
struct ResidualMlp {
    Linear up;
    Linear down;

    ResidualMlp() = default;
    ResidualMlp(std::size_t width, std::size_t hidden, Rng &rng);

    Tensor operator()(const Tensor &x) const { return add(x, down(silu(up(x)))); }
    void collect(ParamList &out, const std::string &prefix) const;
};

// Learned lookup table [rows, dim].
struct Embedding {
    Tensor table;

    Embedding() = default;
    Embedding(std::size_t rows, std::size_t dim, Rng &rng, double stddev = 0.02);

    Tensor operator()(const std::vector<std::size_t> &idx) const { return gather_rows(table, idx); }
    void collect(ParamList &out, const std::string &prefix) const;
};

}  // namespace nn

}  // namespace semgen
