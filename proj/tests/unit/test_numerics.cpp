#include <cmath>
#include <limits>

#include "doctest.h"
#include "gradcheck.hpp"
#include "semgen/errors.hpp"
#include "semgen/optim.hpp"
#include "semgen/tensor.hpp"

using namespace semgen;
using semgen::testing::grad_check;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

// Dense reference attention: masked logits set to -inf before the softmax.
std::vector<double> dense_attention(const Tensor &q, const Tensor &k, const Tensor &v,
                                    const AttentionMask &mask) {
    const std::size_t lq = q.rows(), lk = k.rows(), d = q.cols(), dv = v.cols();
    std::vector<double> out(lq * dv, 0.0);
    for (std::size_t i = 0; i < lq; ++i) {
        std::vector<double> s(lk);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < lk; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += q.at(i, c) * k.at(j, c);
            s[j] = mask.allowed(i, j) ? dot / std::sqrt(static_cast<double>(d))
                                      : -std::numeric_limits<double>::infinity();
            mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto &x : s) {
            x = std::exp(x - mx);
            z += x;
        }
        for (std::size_t j = 0; j < lk; ++j)
            for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += s[j] / z * v.at(j, c);
    }
    return out;
}

}  // namespace

TEST_CASE("matmul: identity and direct arithmetic") {
    auto id = mat(2, 2, {1, 0, 0, 1});
    auto m = mat(2, 2, {1, 2, 3, 4});
    auto r = matmul(id, m);
    CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{1, 2, 3, 4});
    auto dot = matmul(mat(1, 2, {1, 2}), mat(2, 1, {3, 4}));
    CHECK(dot.item() == 11.0);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
    try {
        matmul(Tensor({2, 3}), Tensor({2, 3}));
        FAIL("expected DimensionError");
    } catch (const DimensionError &e) {
        CHECK(std::string(e.what()).find("[2,3] x [2,3]") != std::string::npos);
    }
}

TEST_CASE("matmul: gradient of sum matches central differences") {
    Rng rng(11);
    auto a = Tensor::randn({3, 4}, rng);
    auto b = Tensor::randn({4, 2}, rng);
    auto r = grad_check([&] { return sum(matmul(a, b)); }, {a, b});
    CHECK(r.rel_error <= 1e-6);
}

TEST_CASE("softmax_attention: degenerate cases") {
    SUBCASE("single key") {
        auto out = softmax_attention(mat(1, 2, {0.3, -1}), mat(1, 2, {2, 5}), mat(1, 3, {7, 8, 9}),
                                     AttentionMask::full(1));
        CHECK(out.at(0, 0) == doctest::Approx(7));
        CHECK(out.at(0, 1) == doctest::Approx(8));
        CHECK(out.at(0, 2) == doctest::Approx(9));
    }
    SUBCASE("two identical keys average their values") {
        AttentionMask m(1, 2, true);
        auto out = softmax_attention(mat(1, 2, {0.5, 1}), mat(2, 2, {1, 1, 1, 1}),
                                     mat(2, 2, {1, 2, 3, 6}), m);
        CHECK(out.at(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(out.at(0, 1) == doctest::Approx(4.0).epsilon(1e-14));
    }
}

TEST_CASE("softmax_attention: masked key matches dense -inf recomputation") {
    Rng rng(5);
    auto q = Tensor::randn({4, 3}, rng), k = Tensor::randn({4, 3}, rng), v = Tensor::randn({4, 2}, rng);
    AttentionMask mask(4, 4, true);
    for (std::size_t i = 0; i < 4; ++i) mask.set(i, 2, false);
    auto out = softmax_attention(q, k, v, mask);
    auto ref = dense_attention(q, k, v, mask);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(out.data()[i] - ref[i]) <= 1e-12);
}

TEST_CASE("softmax_attention: all-masked row is a configuration error") {
    AttentionMask mask(2, 2, true);
    mask.set(1, 0, false);
    mask.set(1, 1, false);
    CHECK_THROWS_AS(softmax_attention(Tensor({2, 2}), Tensor({2, 2}), Tensor({2, 2}), mask), ConfigError);
}

TEST_CASE("softmax_attention: weights over unmasked keys sum to one") {
    // Constant value rows make the output equal the row sum of the weights.
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t l = 6;
        auto q = Tensor::randn({l, 4}, rng, 3.0), k = Tensor::randn({l, 4}, rng, 3.0);
        auto v = Tensor::full({l, 1}, 1.0);
        AttentionMask mask(l, l, false);
        for (std::size_t i = 0; i < l; ++i) {
            mask.set(i, i, true);
            for (std::size_t j = 0; j < l; ++j)
                if (rng.uniform() < 0.5) mask.set(i, j, true);
        }
        auto out = softmax_attention(q, k, v, mask);
        for (double x : out.data()) CHECK(std::abs(x - 1.0) <= 1e-9);
    }
}

TEST_CASE("rms_norm: closed-form examples") {
    auto ones = Tensor::full({1, 4}, 1.0);
    auto out = rms_norm(ones, Tensor::full({4}, 1.0), Tensor::full({4}, 1.0), 0.0);
    for (double x : out.data()) CHECK(x == doctest::Approx(1.0));
    auto y = rms_norm(mat(1, 2, {3, -3}), Tensor::full({2}, 1.0), Tensor::full({2}, 2.0), 0.0);
    CHECK(y.data()[0] == doctest::Approx(2.0));
    CHECK(y.data()[1] == doctest::Approx(-2.0));
}

TEST_CASE("rms_norm: matches a scalar loop") {
    Rng rng(9);
    auto x = Tensor::randn({3, 7}, rng), g = Tensor::randn({7}, rng), s = Tensor::randn({7}, rng);
    const double eps = 1e-6;
    auto out = rms_norm(x, g, s, eps);
    for (std::size_t i = 0; i < 3; ++i) {
        double ms = 0.0;
        for (std::size_t j = 0; j < 7; ++j) ms += x.at(i, j) * x.at(i, j);
        const double r = std::sqrt(ms / 7.0 + eps);
        for (std::size_t j = 0; j < 7; ++j) {
            const double ref = s.data()[j] * g.data()[j] * x.at(i, j) / r;
            CHECK(std::abs(out.at(i, j) - ref) <= 1e-12);
        }
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamList params{{"w", Tensor({3}, {1.0, -2.0, 0.5}, true)}};
    params[0].tensor.mutable_grad();
    auto state = AdamState::zeros_like(params);
    adam_step(params, state, {});
    CHECK(params[0].tensor.data()[0] == 1.0);
    CHECK(params[0].tensor.data()[1] == -2.0);
    CHECK(params[0].tensor.data()[2] == 0.5);
}

TEST_CASE("adam: moment-free step is a signed lr step") {
    ParamList params{{"w", Tensor({1}, {2.0}, true)}};
    params[0].tensor.mutable_grad()[0] = -0.3;
    auto state = AdamState::zeros_like(params);
    AdamHyper h;
    h.lr = 0.1;
    h.beta1 = 0.0;
    h.beta2 = 0.0;
    adam_step(params, state, h);
    CHECK(params[0].tensor.data()[0] == doctest::Approx(2.0 - 0.1 * -0.3 / (0.3 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam: three steps on x^2 match a hand-rolled loop") {
    ParamList params{{"x", Tensor({1}, {1.5}, true)}};
    auto state = AdamState::zeros_like(params);
    AdamHyper h;
    h.lr = 0.05;
    double x = 1.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        params[0].tensor.zero_grad();
        auto loss = mul(params[0].tensor, params[0].tensor);
        sum(loss).backward();
        adam_step(params, state, h);
        const double g = 2.0 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
        x -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(std::abs(params[0].tensor.data()[0] - x) <= 1e-12);
    }
}

TEST_CASE("adam: non-finite gradient aborts with the parameter name") {
    ParamList params{{"encoder.w", Tensor({2}, true)}};
    params[0].tensor.mutable_grad()[1] = std::nan("");
    auto state = AdamState::zeros_like(params);
    try {
        adam_step(params, state, {});
        FAIL("expected TrainingAbort");
    } catch (const TrainingAbort &e) {
        CHECK(e.parameter == "encoder.w");
    }
}

TEST_CASE("every differentiable op passes finite differences over 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(1000 + seed);
        auto x = Tensor::randn({3, 4}, rng), y = Tensor::randn({3, 4}, rng);
        auto w = Tensor::randn({4, 5}, rng), b = Tensor::randn({5}, rng);
        auto row = Tensor::randn({4}, rng), gain = Tensor::randn({4}, rng), sc = Tensor::randn({4}, rng);
        auto probe = Tensor::randn({3, 5}, rng);
        auto probe4 = Tensor::randn({3, 4}, rng);
        auto weighted = [](const Tensor &t, const Tensor &p) { return sum(mul(t, p)); };
        const double tol = 1e-4;

        CHECK(grad_check([&] { return weighted(linear(x, w, b), probe); }, {x, w, b}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(add(x, y), probe4); }, {x, y}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(sub(x, y), probe4); }, {x, y}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(mul(x, y), probe4); }, {x, y}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(silu(x), probe4); }, {x}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(exp(scale(x, 0.5)), probe4); }, {x}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(add_row(x, row), probe4); }, {x, row}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(mul_row(x, row), probe4); }, {x, row}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(rms_norm(x, gain, sc, 1e-6), probe4); }, {x, gain, sc})
                  .rel_error <= tol);
        CHECK(grad_check([&] { return mse(x, y); }, {x, y}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(mean_rows(x), slice_rows(probe4, 0, 1)); }, {x})
                  .rel_error <= tol);
        CHECK(grad_check([&] { return cross_entropy(slice_rows(x, 1, 2), seed % 4); }, {x}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(concat_rows({x, slice_rows(y, 0, 2)}),
                                               concat_rows({probe4, slice_rows(probe4, 0, 2)})); },
                         {x, y})
                  .rel_error <= tol);
        CHECK(grad_check([&] { return weighted(gather_rows(x, {2, 0, 2}), probe4); }, {x}).rel_error <= tol);
        CHECK(grad_check([&] { return weighted(x.reshape({4, 3}), probe4.reshape({4, 3})); }, {x})
                  .rel_error <= tol);

        auto q = Tensor::randn({5, 4}, rng), k = Tensor::randn({5, 4}, rng), v = Tensor::randn({5, 6}, rng);
        auto pv = Tensor::randn({5, 6}, rng);
        AttentionMask mask(5, 5, true);
        mask.set(0, 3, false);
        mask.set(4, 1, false);
        mask.set(2, 2, false);
        CHECK(grad_check([&] { return weighted(multi_head_attention(q, k, v, 2, mask), pv); }, {q, k, v})
                  .rel_error <= tol);
    }
}

TEST_CASE("forward determinism: same seed, same outputs") {
    auto run = [] {
        Rng rng(77);
        auto q = Tensor::randn({6, 4}, rng), k = Tensor::randn({6, 4}, rng), v = Tensor::randn({6, 4}, rng);
        auto out = multi_head_attention(q, k, v, 2, AttentionMask::full(6));
        return std::vector<double>(out.data().begin(), out.data().end());
    };
    CHECK(run() == run());
}

TEST_CASE("rng: identical seeds give identical streams and state round-trips") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    a.normal();
    auto c = Rng::deserialize(a.serialize());
    for (int i = 0; i < 10; ++i) CHECK(a.normal() == c.normal());
    // xoshiro256** seeded via splitmix64(0), from an independent reference.
    Rng z(0);
    CHECK(z.next_u64() == 11091344671253066420ULL);
    CHECK(z.next_u64() == 13793997310169335082ULL);
    CHECK(z.next_u64() == 1900383378846508768ULL);
}
