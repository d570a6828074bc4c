#include "semgen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "semgen/errors.hpp"

namespace semgen {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Tensor &a, const Tensor &b, const char *op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_rank2(const Tensor &a, const char *op) {
    if (a.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                             shape_str(a.shape()));
    }
}

// Row-major C = alpha * op(A) op(B) + beta * C on strided views, through
// Eigen (faster than OpenBLAS at these sizes).
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using View = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

void dgemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha, const double *a,
           std::size_t lda, const double *b, std::size_t ldb, double beta, double *c, std::size_t ldc) {
    const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
    View C(c, M, N, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldc)));
    const ConstView A(a, ta ? K : M, ta ? M : K, Eigen::OuterStride<>(static_cast<Eigen::Index>(lda)));
    const ConstView B(b, tb ? N : K, tb ? K : N, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldb)));
    if (beta == 0.0) {
        C.setZero();
    } else if (beta != 1.0) {
        C *= beta;
    }
    if (ta && tb) {
        C.noalias() += alpha * A.transpose() * B.transpose();
    } else if (ta) {
        C.noalias() += alpha * A.transpose() * B;
    } else if (tb) {
        C.noalias() += alpha * A * B.transpose();
    } else {
        C.noalias() += alpha * A * B;
    }
}

// The three product shapes of matmul / linear; all accumulate into C.
// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double *a, const double *b,
             double *c) {
    dgemm(false, false, m, n, k, 1.0, a, k, b, n, 1.0, c, n);
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double *a, const double *b,
             double *c) {
    dgemm(false, true, m, n, k, 1.0, a, k, b, k, 1.0, c, n);
}

// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double *a, const double *b,
             double *c) {
    dgemm(true, false, k, n, m, 1.0, a, k, b, n, 1.0, c, n);
}

template <class Fwd, class Deriv>
Tensor unary_op(const Tensor &a, Fwd fwd, Deriv deriv) {
    const auto in = a.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return make_op(a.shape(), std::move(out), {a}, [a, deriv](std::span<const double> g) mutable {
        if (!a.requires_grad()) return;
        auto ga = a.mutable_grad();
        const auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i]);
    });
}

}  // namespace

std::size_t shape_numel(const Shape &shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::span<double> detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(shape_numel(shape), 0.0);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::randn(Shape shape, Rng &rng, double stddev, bool requires_grad) {
    std::vector<double> v(shape_numel(shape));
    for (auto &x : v) x = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

const Shape &Tensor::shape() const {
    static const Shape empty;
    return node_ ? node_->shape : empty;
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::size_t Tensor::rows() const {
    require_rank2(*this, "rows");
    return shape()[0];
}

std::size_t Tensor::cols() const {
    require_rank2(*this, "cols");
    return shape()[1];
}

std::span<const double> Tensor::data() const {
    if (!node_) return {};
    return node_->value;
}

std::span<double> Tensor::mutable_data() const {
    if (!node_) return {};
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (node_) node_->requires_grad = on;
}

std::span<const double> Tensor::grad() const {
    if (!node_) return {};
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() const { return node_->grad_buffer(); }

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
    }
    if (!requires_grad()) return;
    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<detail::Node *> order;
    std::unordered_set<detail::Node *> seen;
    std::vector<std::pair<detail::Node *, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto &[n, idx] = stack.back();
        if (idx < n->parents.size()) {
            detail::Node *p = n->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node *n = *it;
        if (n->backward && !n->grad.empty()) n->backward(n->grad);
    }
}

Tensor Tensor::detach() const {
    return Tensor(shape(), std::vector<double>(data().begin(), data().end()));
}

Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw DimensionError("reshape " + shape_str(shape()) + " -> " + shape_str(new_shape));
    }
    Tensor a = *this;
    return make_op(std::move(new_shape), std::vector<double>(data().begin(), data().end()), {a},
                   [a](std::span<const double> g) mutable {
                       if (!a.requires_grad()) return;
                       auto ga = a.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   });
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(std::span<const double>)> backward) {
    Tensor out(std::move(shape), std::move(value));
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const auto &p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (const auto &p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward = std::move(backward);
    return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

AttentionMask::AttentionMask(std::size_t queries, std::size_t keys, bool fill)
    : queries_(queries), keys_(keys), bits_(queries * keys, fill ? 1 : 0) {}

std::size_t AttentionMask::count_allowed() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

std::vector<std::vector<std::size_t>> AttentionMask::key_lists() const {
    std::vector<std::vector<std::size_t>> lists(queries_);
    for (std::size_t q = 0; q < queries_; ++q) {
        const unsigned char *row = bits_.data() + q * keys_;
        for (std::size_t k = 0; k < keys_; ++k)
            if (row[k]) lists[q].push_back(k);
    }
    return lists;
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor &a, const Tensor &b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
        if (a.requires_grad()) {
            auto ga = a.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = b.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

Tensor sub(const Tensor &a, const Tensor &b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return make_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
        if (a.requires_grad()) {
            auto ga = a.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = b.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor &a, const Tensor &b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
        const auto x = a.data(), y = b.data();
        if (a.requires_grad()) {
            auto ga = a.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (b.requires_grad()) {
            auto gb = b.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
    });
}

Tensor scale(const Tensor &a, double s) {
    return unary_op(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Tensor add_scalar(const Tensor &a, double s) {
    return unary_op(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Tensor silu(const Tensor &a) {
    return unary_op(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x) {
            const double sg = 1.0 / (1.0 + std::exp(-x));
            return sg * (1.0 + x * (1.0 - sg));
        });
}

Tensor exp(const Tensor &a) {
    return unary_op(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor clamp(const Tensor &a, double lo, double hi) {
    return unary_op(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ------------------------------------------------------------------ row-wise

namespace {

void require_row(const Tensor &x, const Tensor &row, const char *op) {
    require_rank2(x, op);
    if (row.numel() != x.cols()) {
        throw DimensionError(std::string(op) + ": row vector " + shape_str(row.shape()) +
                             " does not broadcast over " + shape_str(x.shape()));
    }
}

}  // namespace

Tensor add_row(const Tensor &x, const Tensor &row) {
    require_row(x, row, "add_row");
    const std::size_t n = x.rows(), c = x.cols();
    std::vector<double> out(x.data().begin(), x.data().end());
    const auto r = row.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += r[j];
    return make_op(x.shape(), std::move(out), {x, row},
                   [x, row, n, c](std::span<const double> g) mutable {
                       if (x.requires_grad()) {
                           auto gx = x.mutable_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (row.requires_grad()) {
                           auto gr = row.mutable_grad();
                           for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < c; ++j) gr[j] += g[i * c + j];
                       }
                   });
}

Tensor mul_row(const Tensor &x, const Tensor &row) {
    require_row(x, row, "mul_row");
    const std::size_t n = x.rows(), c = x.cols();
    std::vector<double> out(x.numel());
    const auto xv = x.data(), r = row.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * r[j];
    return make_op(x.shape(), std::move(out), {x, row},
                   [x, row, n, c](std::span<const double> g) mutable {
                       const auto xv = x.data(), r = row.data();
                       if (x.requires_grad()) {
                           auto gx = x.mutable_grad();
                           for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] * r[j];
                       }
                       if (row.requires_grad()) {
                           auto gr = row.mutable_grad();
                           for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < c; ++j) gr[j] += g[i * c + j] * xv[i * c + j];
                       }
                   });
}

// ------------------------------------------------------------ linear algebra

Tensor matmul(const Tensor &a, const Tensor &b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
    return make_op({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) mutable {
        if (a.requires_grad()) gemm_nt(m, n, k, g.data(), b.data().data(), a.mutable_grad().data());
        if (b.requires_grad()) gemm_tn(m, k, n, a.data().data(), g.data(), b.mutable_grad().data());
    });
}

Tensor linear(const Tensor &x, const Tensor &w, const Tensor &bias) {
    require_rank2(x, "linear");
    require_rank2(w, "linear");
    if (x.cols() != w.rows()) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    }
    const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
    if (bias.defined() && bias.numel() != n) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    if (bias.defined()) {
        const auto bv = bias.data();
        for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * n);
    }
    gemm_nn(m, k, n, x.data().data(), w.data().data(), out.data());
    std::vector<Tensor> parents{x, w};
    if (bias.defined()) parents.push_back(bias);
    return make_op({m, n}, std::move(out), std::move(parents),
                   [x, w, bias, m, k, n](std::span<const double> g) mutable {
                       if (x.requires_grad())
                           gemm_nt(m, n, k, g.data(), w.data().data(), x.mutable_grad().data());
                       if (w.requires_grad())
                           gemm_tn(m, k, n, x.data().data(), g.data(), w.mutable_grad().data());
                       if (bias.defined() && bias.requires_grad()) {
                           auto gb = bias.mutable_grad();
                           for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                       }
                   });
}

Tensor rms_norm(const Tensor &x, const Tensor &gain, const Tensor &scale, double eps) {
    require_rank2(x, "rms_norm");
    const std::size_t n = x.rows(), c = x.cols();
    if (gain.numel() != c || (scale.defined() && scale.numel() != c)) {
        throw DimensionError("rms_norm: gain/scale must have " + std::to_string(c) + " channels");
    }
    const auto xv = x.data(), gv = gain.data();
    std::vector<double> out(n * c), inv_rms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double ms = 0.0;
        for (std::size_t j = 0; j < c; ++j) ms += xv[i * c + j] * xv[i * c + j];
        inv_rms[i] = 1.0 / std::sqrt(ms / static_cast<double>(c) + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const double s = scale.defined() ? scale.data()[j] : 1.0;
            out[i * c + j] = s * gv[j] * xv[i * c + j] * inv_rms[i];
        }
    }
    std::vector<Tensor> parents{x, gain};
    if (scale.defined()) parents.push_back(scale);
    return make_op(
        x.shape(), std::move(out), std::move(parents),
        [x, gain, scale, n, c, inv_rms = std::move(inv_rms)](std::span<const double> g) mutable {
            const auto xv = x.data(), gv = gain.data();
            std::vector<double> a(c);
            for (std::size_t i = 0; i < n; ++i) {
                const double r = inv_rms[i];
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double s = scale.defined() ? scale.data()[j] : 1.0;
                    const double u = xv[i * c + j] * r;
                    const double gy = g[i * c + j];
                    if (gain.requires_grad()) gain.mutable_grad()[j] += gy * s * u;
                    if (scale.defined() && scale.requires_grad()) scale.mutable_grad()[j] += gy * gv[j] * u;
                    a[j] = gy * s * gv[j];
                    dot += a[j] * u;
                }
                if (x.requires_grad()) {
                    auto gx = x.mutable_grad();
                    dot /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double u = xv[i * c + j] * r;
                        gx[i * c + j] += r * (a[j] - u * dot);
                    }
                }
            }
        });
}

namespace {

Tensor dense_attention(const Tensor &q, const Tensor &k, const Tensor &v, std::size_t heads, const AttentionMask &mask) {
    const std::size_t lq = q.rows(), lk = k.rows();
    const std::size_t dq = q.cols(), dv = v.cols();
    const std::size_t hd = dq / heads, hv = dv / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    // Dense per-head scores through GEMM; forbidden pairs get probability
    // exactly zero, so they drop out of both passes.
    auto probs = std::make_shared<std::vector<double>>(heads * lq * lk);
    std::vector<double> out(lq * dv, 0.0);
    const auto qv = q.data(), kv = k.data(), vv = v.data();
    for (std::size_t h = 0; h < heads; ++h) {
        double *P = probs->data() + h * lq * lk;
        dgemm(false, true, lq, lk, hd, inv_sqrt, qv.data() + h * hd, dq, kv.data() + h * hd, dq, 0.0, P, lk);
        for (std::size_t i = 0; i < lq; ++i) {
            double *row = P + i * lk;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < lk; ++j)
                if (mask.allowed(i, j)) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (std::size_t j = 0; j < lk; ++j) {
                row[j] = mask.allowed(i, j) ? std::exp(row[j] - mx) : 0.0;
                z += row[j];
            }
            for (std::size_t j = 0; j < lk; ++j) row[j] /= z;
        }
        dgemm(false, false, lq, hv, lk, 1.0, P, lk, vv.data() + h * hv, dv, 0.0, out.data() + h * hv, dv);
    }
    return make_op(
        {lq, dv}, std::move(out), {q, k, v},
        [q, k, v, probs, heads, lq, lk, dq, dv, hd, hv, inv_sqrt](std::span<const double> g) mutable {
            const auto qv = q.data(), kv = k.data(), vv = v.data();
            double *gq = q.requires_grad() ? q.mutable_grad().data() : nullptr;
            double *gk = k.requires_grad() ? k.mutable_grad().data() : nullptr;
            double *gvv = v.requires_grad() ? v.mutable_grad().data() : nullptr;
            std::vector<double> dS(lq * lk);
            for (std::size_t h = 0; h < heads; ++h) {
                const double *P = probs->data() + h * lq * lk;
                const double *go = g.data() + h * hv;
                if (gvv) {
                    dgemm(true, false, lk, hv, lq, 1.0, P, lk, go, dv, 1.0, gvv + h * hv, dv);
                }
                if (!gq && !gk) continue;
                // dP = dO V^T, then dS = P * (dP - rowsum(P * dP)) / sqrt(hd).
                dgemm(false, true, lq, lk, hv, 1.0, go, dv, vv.data() + h * hv, dv, 0.0, dS.data(), lk);
                for (std::size_t i = 0; i < lq; ++i) {
                    double *row = dS.data() + i * lk;
                    const double *p = P + i * lk;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < lk; ++j) dot += p[j] * row[j];
                    for (std::size_t j = 0; j < lk; ++j) row[j] = p[j] * (row[j] - dot) * inv_sqrt;
                }
                if (gq) {
                    dgemm(false, false, lq, hd, lk, 1.0, dS.data(), lk, kv.data() + h * hd, dq, 1.0, gq + h * hd, dq);
                }
                if (gk) {
                    dgemm(true, false, lk, hd, lq, 1.0, dS.data(), lk, qv.data() + h * hd, dq, 1.0, gk + h * hd, dq);
                }
            }
        });
}

// Per-query key lists; cheaper than the dense path for sparse masks.
Tensor sparse_attention(const Tensor &q, const Tensor &k, const Tensor &v, std::size_t heads,
                        const AttentionMask &mask) {
    const std::size_t lq = q.rows();
    const std::size_t dq = q.cols(), dv = v.cols();
    const std::size_t hd = dq / heads, hv = dv / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    auto keys = std::make_shared<std::vector<std::vector<std::size_t>>>(mask.key_lists());
    // probs[h][i] holds softmax weights aligned with keys[i].
    auto probs = std::make_shared<std::vector<std::vector<double>>>(heads * lq);
    std::vector<double> out(lq * dv, 0.0);
    const auto qv = q.data(), kv = k.data(), vv = v.data();
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < lq; ++i) {
            const auto &ks = (*keys)[i];
            auto &p = (*probs)[h * lq + i];
            p.resize(ks.size());
            const double *qi = qv.data() + i * dq + h * hd;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < ks.size(); ++a) {
                const double *kj = kv.data() + ks[a] * dq + h * hd;
                double s = 0.0;
                for (std::size_t d = 0; d < hd; ++d) s += qi[d] * kj[d];
                p[a] = s * inv_sqrt;
                mx = std::max(mx, p[a]);
            }
            double z = 0.0;
            for (auto &e : p) {
                e = std::exp(e - mx);
                z += e;
            }
            double *oi = out.data() + i * dv + h * hv;
            for (std::size_t a = 0; a < ks.size(); ++a) {
                p[a] /= z;
                const double *vj = vv.data() + ks[a] * dv + h * hv;
                for (std::size_t d = 0; d < hv; ++d) oi[d] += p[a] * vj[d];
            }
        }
    }
    return make_op(
        {lq, dv}, std::move(out), {q, k, v},
        [q, k, v, keys, probs, heads, lq, dq, dv, hd, hv, inv_sqrt](std::span<const double> g) mutable {
            const auto qv = q.data(), kv = k.data(), vv = v.data();
            double *gq = q.requires_grad() ? q.mutable_grad().data() : nullptr;
            double *gk = k.requires_grad() ? k.mutable_grad().data() : nullptr;
            double *gvv = v.requires_grad() ? v.mutable_grad().data() : nullptr;
            std::vector<double> dp;
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < lq; ++i) {
                    const auto &ks = (*keys)[i];
                    const auto &p = (*probs)[h * lq + i];
                    const double *go = g.data() + i * dv + h * hv;
                    dp.assign(ks.size(), 0.0);
                    double dot = 0.0;
                    for (std::size_t a = 0; a < ks.size(); ++a) {
                        const double *vj = vv.data() + ks[a] * dv + h * hv;
                        double s = 0.0;
                        for (std::size_t d = 0; d < hv; ++d) s += go[d] * vj[d];
                        dp[a] = s;
                        dot += s * p[a];
                        if (gvv) {
                            double *gvj = gvv + ks[a] * dv + h * hv;
                            for (std::size_t d = 0; d < hv; ++d) gvj[d] += p[a] * go[d];
                        }
                    }
                    const double *qi = qv.data() + i * dq + h * hd;
                    for (std::size_t a = 0; a < ks.size(); ++a) {
                        const double ds = p[a] * (dp[a] - dot) * inv_sqrt;
                        if (ds == 0.0) continue;
                        const double *kj = kv.data() + ks[a] * dq + h * hd;
                        if (gq) {
                            double *gqi = gq + i * dq + h * hd;
                            for (std::size_t d = 0; d < hd; ++d) gqi[d] += ds * kj[d];
                        }
                        if (gk) {
                            double *gkj = gk + ks[a] * dq + h * hd;
                            for (std::size_t d = 0; d < hd; ++d) gkj[d] += ds * qi[d];
                        }
                    }
                }
            }
        });
}

}  // namespace

Tensor multi_head_attention(const Tensor &q, const Tensor &k, const Tensor &v, std::size_t heads,
                            const AttentionMask &mask) {
    require_rank2(q, "attention");
    require_rank2(k, "attention");
    require_rank2(v, "attention");
    const std::size_t lq = q.rows(), lk = k.rows();
    if (heads == 0 || q.cols() != k.cols() || q.cols() % heads != 0 || v.cols() % heads != 0 ||
        v.rows() != lk) {
        throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                             shape_str(k.shape()) + ", v " + shape_str(v.shape()) + " for " +
                             std::to_string(heads) + " heads");
    }
    if (mask.queries() != lq || mask.keys() != lk) {
        throw DimensionError("attention: mask " + std::to_string(mask.queries()) + "x" +
                             std::to_string(mask.keys()) + " does not match " + std::to_string(lq) +
                             "x" + std::to_string(lk));
    }
    std::size_t allowed = 0;
    for (std::size_t i = 0; i < lq; ++i) {
        std::size_t row = 0;
        for (std::size_t j = 0; j < lk; ++j) row += mask.allowed(i, j);
        if (row == 0) throw ConfigError("attention: query row " + std::to_string(i) + " has every key masked");
        allowed += row;
    }
    // Both paths compute the same function; the dense one wins once most
    // pairs are allowed.
    if (2 * allowed > lq * lk) return dense_attention(q, k, v, heads, mask);
    return sparse_attention(q, k, v, heads, mask);
}

Tensor softmax_attention(const Tensor &q, const Tensor &k, const Tensor &v,
                         const AttentionMask &mask) {
    return multi_head_attention(q, k, v, 1, mask);
}

// ----------------------------------------------------------------- structure

Tensor concat_rows(const std::vector<Tensor> &parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t n = 0;
    for (const auto &p : parts) {
        if (p.cols() != c) {
            throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) +
                                 " vs " + shape_str(p.shape()));
        }
        n += p.rows();
    }
    std::vector<double> out;
    out.reserve(n * c);
    for (const auto &p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_op({n, c}, std::move(out), parts, [parts](std::span<const double> g) mutable {
        std::size_t off = 0;
        for (auto &p : parts) {
            if (p.requires_grad()) {
                auto gp = p.mutable_grad();
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
            }
            off += p.numel();
        }
    });
}

Tensor slice_rows(const Tensor &x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_rows");
    if (begin > end || end > x.rows()) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t c = x.cols();
    std::vector<double> out(x.data().begin() + begin * c, x.data().begin() + end * c);
    return make_op({end - begin, c}, std::move(out), {x}, [x, begin, c](std::span<const double> g) mutable {
        if (!x.requires_grad()) return;
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[begin * c + i] += g[i];
    });
}

Tensor gather_rows(const Tensor &table, const std::vector<std::size_t> &indices) {
    require_rank2(table, "gather_rows");
    const std::size_t c = table.cols();
    std::vector<double> out(indices.size() * c);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= table.rows()) {
            throw DimensionError("gather_rows: index " + std::to_string(indices[i]) +
                                 " out of range for " + shape_str(table.shape()));
        }
        std::copy_n(table.data().begin() + indices[i] * c, c, out.begin() + i * c);
    }
    return make_op({indices.size(), c}, std::move(out), {table},
                   [table, indices, c](std::span<const double> g) mutable {
                       if (!table.requires_grad()) return;
                       auto gt = table.mutable_grad();
                       for (std::size_t i = 0; i < indices.size(); ++i)
                           for (std::size_t j = 0; j < c; ++j) gt[indices[i] * c + j] += g[i * c + j];
                   });
}

// ------------------------------------------------------------------- reduce

Tensor sum(const Tensor &a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    return make_op({}, {s}, {a}, [a](std::span<const double> g) mutable {
        if (!a.requires_grad()) return;
        for (auto &x : a.mutable_grad()) x += g[0];
    });
}

Tensor mean(const Tensor &a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_rows(const Tensor &x) {
    require_rank2(x, "mean_rows");
    const std::size_t n = x.rows(), c = x.cols();
    std::vector<double> out(c, 0.0);
    const auto xv = x.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += xv[i * c + j];
    for (auto &o : out) o /= static_cast<double>(n);
    return make_op({1, c}, std::move(out), {x}, [x, n, c](std::span<const double> g) mutable {
        if (!x.requires_grad()) return;
        auto gx = x.mutable_grad();
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j] * inv;
    });
}

Tensor mse(const Tensor &a, const Tensor &b) {
    require_same_shape(a, b, "mse");
    const auto x = a.data(), y = b.data();
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return make_op({}, {s * inv}, {a, b}, [a, b, inv](std::span<const double> g) mutable {
        const auto x = a.data(), y = b.data();
        const double f = 2.0 * g[0] * inv;
        if (a.requires_grad()) {
            auto ga = a.mutable_grad();
            for (std::size_t i = 0; i < x.size(); ++i) ga[i] += f * (x[i] - y[i]);
        }
        if (b.requires_grad()) {
            auto gb = b.mutable_grad();
            for (std::size_t i = 0; i < x.size(); ++i) gb[i] -= f * (x[i] - y[i]);
        }
    });
}

Tensor cross_entropy(const Tensor &logits, std::size_t label) {
    const auto z = logits.data();
    if (label >= z.size()) {
        throw DimensionError("cross_entropy: label " + std::to_string(label) + " with " +
                             std::to_string(z.size()) + " classes");
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    return make_op({}, {lse - z[label]}, {logits}, [logits, label, lse](std::span<const double> g) mutable {
        if (!logits.requires_grad()) return;
        const auto z = logits.data();
        auto gl = logits.mutable_grad();
        for (std::size_t i = 0; i < z.size(); ++i)
            gl[i] += g[0] * (std::exp(z[i] - lse) - (i == label ? 1.0 : 0.0));
    });
}

}  // namespace semgen
