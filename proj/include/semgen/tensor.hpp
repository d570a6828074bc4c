#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "semgen/rng.hpp"

namespace semgen {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

class Tensor;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(std::span<const double>)> backward;

    std::span<double> grad_buffer();
};

}  // namespace detail

// Dense row-major float64 tensor with reverse-mode autodiff. A Tensor is a
// shared handle: copies alias the same node. Op outputs are never mutated
// after construction; only leaves (parameters) are updated in place, by the
// optimizer.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double v);
    static Tensor randn(Shape shape, Rng &rng, double stddev = 1.0, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape &shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    // 2-D accessors; throw DimensionError for other ranks.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    // Tensor is a handle, so these mutate the shared node.
    std::span<double> mutable_data() const;
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    // Empty span when no gradient has been accumulated yet.
    std::span<const double> grad() const;
    std::span<double> mutable_grad() const;
    void zero_grad();

    // Seeds d(this)/d(this) = 1 and back-propagates. Scalar tensors only.
    void backward() const;

    Tensor detach() const;
    Tensor reshape(Shape shape) const;

    const std::shared_ptr<detail::Node> &node() const { return node_; }

    friend Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                          std::function<void(std::span<const double>)> backward);

   private:
    std::shared_ptr<detail::Node> node_;
};

// Builds an op output. When gradient recording is enabled and any parent
// requires a gradient, `backward` is stored and later invoked with the
// gradient of the output; it must accumulate into the parents' buffers.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(std::span<const double>)> backward);

bool grad_enabled();

// Disables graph construction in a scope (sampling, evaluation).
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

   private:
    bool previous_;
};

// Boolean attention mask over (queries x keys). `true` means the pair may
// attend. Forbidden pairs are excluded from the softmax rather than biased.
class AttentionMask {
   public:
    AttentionMask() = default;
    AttentionMask(std::size_t queries, std::size_t keys, bool fill = true);

    static AttentionMask full(std::size_t n) { return AttentionMask(n, n, true); }

    std::size_t queries() const { return queries_; }
    std::size_t keys() const { return keys_; }
    bool allowed(std::size_t q, std::size_t k) const { return bits_[q * keys_ + k] != 0; }
    void set(std::size_t q, std::size_t k, bool on) { bits_[q * keys_ + k] = on ? 1 : 0; }
    std::size_t count_allowed() const;

    // Allowed key indices per query row.
    std::vector<std::vector<std::size_t>> key_lists() const;

    bool operator==(const AttentionMask &) const = default;

   private:
    std::size_t queries_ = 0;
    std::size_t keys_ = 0;
    std::vector<unsigned char> bits_;
};

// ---- elementwise ----
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double s);
Tensor add_scalar(const Tensor &a, double s);
Tensor silu(const Tensor &a);
Tensor exp(const Tensor &a);
// Gradient passes only where lo < a < hi.
Tensor clamp(const Tensor &a, double lo, double hi);

// ---- broadcasting over the rows of a [N, C] matrix ----
Tensor add_row(const Tensor &x, const Tensor &row);
Tensor mul_row(const Tensor &x, const Tensor &row);

// ---- linear algebra ----
Tensor matmul(const Tensor &a, const Tensor &b);
// x[N, in] * w[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor &x, const Tensor &w, const Tensor &bias);

// scale * gain * x / sqrt(mean(x^2) + eps) along the channel (column) axis.
// gain and scale are [C]; an undefined scale means 1.
Tensor rms_norm(const Tensor &x, const Tensor &gain, const Tensor &scale, double eps);

// Single-head scaled dot-product attention, softmax over allowed keys only.
// A query row with no allowed key is a ConfigError.
Tensor softmax_attention(const Tensor &q, const Tensor &k, const Tensor &v,
                         const AttentionMask &mask);
// Multi-head variant; q/k/v are [L, heads * head_dim] and heads are
// contiguous column blocks.
Tensor multi_head_attention(const Tensor &q, const Tensor &k, const Tensor &v, std::size_t heads,
                            const AttentionMask &mask);

// ---- structure ----
Tensor concat_rows(const std::vector<Tensor> &parts);
Tensor slice_rows(const Tensor &x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor &table, const std::vector<std::size_t> &indices);

// ---- reductions and losses ----
Tensor sum(const Tensor &a);
Tensor mean(const Tensor &a);
Tensor mean_rows(const Tensor &x);
Tensor mse(const Tensor &a, const Tensor &b);
// logits are [K] or [1, K].
Tensor cross_entropy(const Tensor &logits, std::size_t label);

}  // namespace semgen
