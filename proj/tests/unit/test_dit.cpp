#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "semgen/dit.hpp"
#include "semgen/errors.hpp"

using namespace semgen;
using namespace semgen::dit;

namespace {

DitConfig tiny_config(std::size_t c_sem) {
    DitConfig c;
    c.c_model = 8;
    c.blocks = 2;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.temb_dim = 4;
    c.c_target = 3;
    c.c_sem = c_sem;
    c.max_t = 8;
    c.grid_h = 2;
    c.grid_w = 2;
    c.sem_max_t = 2;
    c.sem_h = 1;
    c.sem_w = 1;
    c.frame_w = c.frame_h = 16;
    return c;
}

// Gives the zero-initialized layers random values so every path carries signal.
void randomize_zero_layers(const DitParams &p, Rng &rng) {
    for (const auto &np : p.params()) {
        auto d = np.tensor.mutable_data();
        if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; })) {
            for (auto &v : d) v = 0.3 * rng.normal();
        }
    }
}

synth::FactorSpec some_factors() {
    synth::FactorSpec f;
    f.shape_id = 1;
    f.color = 2;
    f.velocity = {0.3, -0.2};
    f.start = {5.0, 9.0};
    f.background_id = 3;
    f.motion = synth::Motion::kBounce;
    return f;
}

// Time-only latent sequence (h = w = 1, no condition, no semantics).
std::vector<std::vector<bool>> reach_two_layers(std::size_t frames, std::size_t window) {
    const auto seq = build_sequence(frames, 1, 1, nullptr, 0);
    const AttentionLayout lay{LayoutMode::kSwinInterleaved, window};
    const auto even = build_mask(seq, lay, 0);
    const auto odd = build_mask(seq, lay, 1);
    std::vector<std::vector<bool>> r(frames, std::vector<bool>(frames, false));
    for (std::size_t i = 0; i < frames; ++i)
        for (std::size_t j = 0; j < frames; ++j)
            for (std::size_t k = 0; k < frames && !r[i][j]; ++k) r[i][j] = odd.allowed(i, k) && even.allowed(k, j);
    return r;
}

std::size_t latent_pairs(const TokenSequence &seq, const AttentionMask &m) {
    std::size_t n = 0;
    for (std::size_t i = seq.target_offset(); i < seq.size(); ++i)
        for (std::size_t j = seq.target_offset(); j < seq.size(); ++j) n += m.allowed(i, j);
    return n;
}

}  // namespace

TEST_CASE("sequence lengths and raster offsets") {
    const auto seq = build_sequence(2, 2, 2, nullptr, 1);
    CHECK(seq.size() == 9);
    CHECK(seq.kind_count(TokenKind::kCondition) == 1);
    CHECK(seq.kind_count(TokenKind::kTarget) == 8);
    const TokenGrid sem(1, 1, 1, 4);
    const auto with_sem = build_sequence(2, 2, 2, &sem, 1);
    CHECK(with_sem.size() == 10);
    CHECK(with_sem.target_offset() == 2);
    const auto &tok = with_sem.tokens[with_sem.target_offset() + 5];
    CHECK(tok.kind == TokenKind::kTarget);
    CHECK((tok.t == 1 && tok.h == 0 && tok.w == 1));
    // Semantic token time sits at the center of its latent span.
    CHECK(*with_sem.tokens[1].time == doctest::Approx(0.5));
    CHECK_FALSE(with_sem.tokens[0].time.has_value());
}

TEST_CASE("semantic time must divide latent time") {
    const TokenGrid sem(3, 1, 1, 4);
    CHECK_THROWS_AS(build_sequence(8, 1, 1, &sem, 1), ConfigError);
}

TEST_CASE("swin mask matches the window oracle on 8 time steps") {
    const auto seq = build_sequence(8, 1, 1, nullptr, 0);
    const AttentionLayout lay{LayoutMode::kSwinInterleaved, 4};
    const auto even = build_mask(seq, lay, 0);
    const auto odd = build_mask(seq, lay, 1);
    const auto block = [](std::size_t a, std::size_t b, const std::vector<std::size_t> &id) { return id[a] == id[b]; };
    const std::vector<std::size_t> even_id{0, 0, 0, 0, 1, 1, 1, 1};
    const std::vector<std::size_t> odd_id{0, 0, 1, 1, 1, 1, 2, 2};
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(even.allowed(i, j) == block(i, j, even_id));
            CHECK(odd.allowed(i, j) == block(i, j, odd_id));
        }
    CHECK(build_mask(seq, lay, 2) == even);
    CHECK(build_mask(seq, lay, 3) == odd);
}

TEST_CASE("condition tokens are global and semantic tokens see each other") {
    const TokenGrid sem(2, 1, 1, 2);
    const auto seq = build_sequence(8, 1, 1, &sem, 1);
    const AttentionLayout lay{LayoutMode::kSwinInterleaved, 4};
    for (std::size_t layer : {0u, 1u}) {
        const auto m = build_mask(seq, lay, layer);
        for (std::size_t j = 0; j < seq.size(); ++j) {
            CHECK(m.allowed(0, j));
            CHECK(m.allowed(j, 0));
        }
        CHECK(m.allowed(1, 2));
        CHECK(m.allowed(2, 1));
    }
    // Semantic token 0 (time 1.5) shares the first even window with latent times 0..3 only.
    const auto even = build_mask(seq, lay, 0);
    for (std::size_t k = 0; k < 8; ++k) CHECK(even.allowed(1, seq.target_offset() + k) == (k < 4));
}

TEST_CASE("masks are symmetric") {
    const TokenGrid sem(4, 1, 2, 2);
    const auto seq = build_sequence(16, 2, 2, &sem, 1);
    for (auto mode : {LayoutMode::kFull, LayoutMode::kSwinInterleaved}) {
        for (std::size_t layer : {0u, 1u}) {
            const auto m = build_mask(seq, AttentionLayout{mode, 4}, layer);
            for (std::size_t i = 0; i < seq.size(); ++i)
                for (std::size_t j = 0; j < seq.size(); ++j) CHECK(m.allowed(i, j) == m.allowed(j, i));
        }
    }
}

TEST_CASE("two interleaved layers connect nearby latents and nothing beyond their reach") {
    for (std::size_t window : {2u, 4u, 8u}) {
        const std::size_t frames = 6 * window;
        const auto r = reach_two_layers(frames, window);
        for (std::size_t i = 0; i < frames; ++i)
            for (std::size_t j = 0; j < frames; ++j) {
                const std::size_t d = i > j ? i - j : j - i;
                if (d <= window / 2) CHECK(r[i][j]);
                if (d > window + window / 2 - 1) CHECK_FALSE(r[i][j]);
            }
    }
}

TEST_CASE("windowed attention cost grows linearly in time") {
    const AttentionLayout swin{LayoutMode::kSwinInterleaved, 4};
    const auto s64 = build_sequence(64, 2, 2, nullptr, 1);
    const auto s128 = build_sequence(128, 2, 2, nullptr, 1);
    for (std::size_t layer : {0u, 1u}) {
        const double ratio = static_cast<double>(latent_pairs(s128, build_mask(s128, swin, layer))) /
                             static_cast<double>(latent_pairs(s64, build_mask(s64, swin, layer)));
        CHECK(ratio <= 2.2);
    }
    const AttentionLayout full{LayoutMode::kFull, 4};
    const double full_ratio = static_cast<double>(latent_pairs(s128, build_mask(s128, full, 0))) /
                              static_cast<double>(latent_pairs(s64, build_mask(s64, full, 0)));
    CHECK(full_ratio == doctest::Approx(4.0));
}

TEST_CASE("layout validation") {
    CHECK(parse_layout("full") == LayoutMode::kFull);
    CHECK(parse_layout("swin_interleaved") == LayoutMode::kSwinInterleaved);
    CHECK_THROWS_AS(parse_layout("sliding"), ConfigError);
    CHECK_THROWS_AS((AttentionLayout{LayoutMode::kSwinInterleaved, 3}.validate()), ConfigError);
}

TEST_CASE("zero-initialized head predicts zero velocity") {
    Rng rng(1);
    const DitParams p(tiny_config(2), rng);
    const TokenGrid sem(2, 1, 1, 2);
    const auto seq = build_sequence(8, 2, 2, &sem, 1);
    const auto masks = build_masks(seq, {LayoutMode::kFull, 4}, 2);
    const Tensor out = dit_forward(seq, Tensor::randn({32, 3}, rng), Tensor::randn({2, 2}, rng),
                                   condition_tokens(nullptr, p), 0.3, p, masks);
    CHECK(out.shape() == Shape{32, 3});
    for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("permuting tokens together with their positions permutes the output") {
    Rng rng(2);
    const DitParams p(tiny_config(2), rng);
    randomize_zero_layers(p, rng);
    const TokenGrid sem(2, 1, 1, 2);
    const auto seq = build_sequence(4, 2, 2, &sem, 1);
    const Tensor z = Tensor::randn({16, 3}, rng);
    const Tensor zs = Tensor::randn({2, 2}, rng);
    const auto f = some_factors();
    const Tensor cond = condition_tokens(&f, p);
    for (auto mode : {LayoutMode::kFull, LayoutMode::kSwinInterleaved}) {
        const AttentionLayout lay{mode, 2};
        const Tensor base = dit_forward(seq, z, zs, cond, 0.6, p, build_masks(seq, lay, 2));

        std::vector<std::size_t> perm(16);
        std::iota(perm.begin(), perm.end(), 0);
        Rng prng(3);
        for (std::size_t i = 15; i > 0; --i) std::swap(perm[i], perm[prng.below(i + 1)]);
        TokenSequence shuffled = seq;
        std::vector<double> zp(16 * 3);
        for (std::size_t i = 0; i < 16; ++i) {
            shuffled.tokens[seq.target_offset() + i] = seq.tokens[seq.target_offset() + perm[i]];
            for (std::size_t c = 0; c < 3; ++c) zp[i * 3 + c] = z.at(perm[i], c);
        }
        const Tensor out = dit_forward(shuffled, Tensor({16, 3}, zp), zs, cond, 0.6, p,
                                       build_masks(shuffled, lay, 2));
        for (std::size_t i = 0; i < 16; ++i)
            for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out.at(i, c) - base.at(perm[i], c)) < 1e-12);
    }
}

TEST_CASE("one windowed block keeps other windows unaffected") {
    Rng rng(4);
    auto cfg = tiny_config(2);
    cfg.blocks = 1;
    const DitParams p(cfg, rng);
    randomize_zero_layers(p, rng);
    const TokenGrid sem(2, 1, 1, 2);
    const auto seq = build_sequence(8, 2, 2, &sem, 1);
    const auto masks = build_masks(seq, {LayoutMode::kSwinInterleaved, 4}, 1);
    const Tensor z = Tensor::randn({32, 3}, rng);
    const Tensor zs = Tensor::randn({2, 2}, rng);
    const Tensor cond = condition_tokens(nullptr, p);
    const Tensor a = dit_forward(seq, z, zs, cond, 0.5, p, masks);
    Tensor z2({32, 3}, std::vector<double>(z.data().begin(), z.data().end()));
    z2.mutable_data()[0] += 1.0;  // token (t=0, h=0, w=0)
    const Tensor b = dit_forward(seq, z2, zs, cond, 0.5, p, masks);
    double inside = 0.0;
    for (std::size_t i = 0; i < 32; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = std::abs(a.at(i, c) - b.at(i, c));
            if (i >= 16) {
                CHECK(d == 0.0);  // latent time >= 4: second window
            } else {
                inside = std::max(inside, d);
            }
        }
    CHECK(inside > 1e-6);
}

TEST_CASE("semantic embedder gradient is nonzero with semantics and zero without") {
    Rng rng(5);
    const DitParams p(tiny_config(2), rng);
    randomize_zero_layers(p, rng);
    const Tensor z = Tensor::randn({32, 3}, rng);
    const Tensor w = Tensor::randn({32, 3}, rng);
    const Tensor cond = condition_tokens(nullptr, p);
    auto params = p.params();
    const auto sem_params = p.semantic_embedder_params();
    REQUIRE(sem_params.size() == 4);

    const TokenGrid sem(2, 1, 1, 2);
    const auto seq = build_sequence(8, 2, 2, &sem, 1);
    zero_grads(params);
    sum(mul(dit_forward(seq, z, Tensor::randn({2, 2}, rng), cond, 0.4, p, build_masks(seq, {}, 2)), w)).backward();
    for (const auto &sp : sem_params) {
        double n = 0.0;
        for (double g : sp.tensor.grad()) n += g * g;
        CHECK_MESSAGE(n > 0.0, sp.name);
    }

    const auto bare = build_sequence(8, 2, 2, nullptr, 1);
    zero_grads(params);
    sum(mul(dit_forward(bare, z, Tensor(), cond, 0.4, p, build_masks(bare, {}, 2)), w)).backward();
    for (const auto &sp : sem_params) {
        for (double g : sp.tensor.grad()) CHECK(g == 0.0);
    }
}

TEST_CASE("forward rejects mismatched inputs") {
    Rng rng(6);
    const DitParams p(tiny_config(0), rng);
    const auto seq = build_sequence(8, 2, 2, nullptr, 1);
    const Tensor cond = condition_tokens(nullptr, p);
    CHECK_THROWS_AS(dit_forward(seq, Tensor({31, 3}), Tensor(), cond, 0.5, p, build_masks(seq, {}, 2)), DimensionError);
    CHECK_THROWS_AS(dit_forward(seq, Tensor({32, 3}), Tensor(), cond, 0.5, p, build_masks(seq, {}, 1)), DimensionError);
    const TokenGrid sem(2, 1, 1, 2);
    const auto with_sem = build_sequence(8, 2, 2, &sem, 1);
    CHECK_THROWS_AS(dit_forward(with_sem, Tensor({32, 3}), Tensor({2, 2}), cond, 0.5, p, build_masks(with_sem, {}, 2)),
                    ConfigError);
    const auto too_long = build_sequence(16, 2, 2, nullptr, 1);
    CHECK_THROWS_AS(dit_forward(too_long, Tensor({64, 3}), Tensor(), cond, 0.5, p, build_masks(too_long, {}, 2)),
                    DimensionError);
}

TEST_CASE("config round-trips through JSON") {
    auto c = tiny_config(5);
    c.vocab.colors = 3;
    const auto back = DitConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
}

TEST_CASE("every DiT parameter passes finite differences") {
    for (std::uint64_t seed : {10u, 11u, 12u}) {
        Rng rng(seed);
        auto cfg = tiny_config(2);
        cfg.max_t = 2;
        const DitParams p(cfg, rng);
        randomize_zero_layers(p, rng);
        const TokenGrid sem(1, 1, 1, 2);
        const auto seq = build_sequence(2, 2, 2, &sem, 1);
        const auto masks = build_masks(seq, {LayoutMode::kSwinInterleaved, 2}, 2);
        const Tensor z = Tensor::randn({8, 3}, rng);
        const Tensor zs = Tensor::randn({1, 2}, rng);
        const Tensor w = Tensor::randn({8, 3}, rng);
        const auto f = some_factors();
        const auto loss = [&] { return sum(mul(dit_forward(seq, z, zs, condition_tokens(&f, p), 0.7, p, masks), w)); };
        const auto r = semgen::testing::grad_check(loss, p.params());
        CHECK(r.rel_error < 1e-4);
        CHECK(r.analytic_norm > 0.0);
    }
}
