#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "semgen/errors.hpp"
#include "semgen/synthdata.hpp"

using namespace semgen;
using namespace semgen::synth;

namespace {

CorpusConfig small_cfg() {
    CorpusConfig cfg;
    cfg.height = 24;
    cfg.width = 24;
    cfg.frames = 16;
    cfg.num_clips = 8;
    return cfg;
}

// Intensity-weighted centroid of |frame - background|, a renderer-agnostic
// estimate of the sprite center.
Vec2 centroid(const Video &v, const Video &bg, std::size_t f) {
    double sx = 0, sy = 0, sw = 0;
    for (std::size_t c = 0; c < v.channels; ++c)
        for (std::size_t y = 0; y < v.height; ++y)
            for (std::size_t x = 0; x < v.width; ++x) {
                const double w = std::abs(v.at(f, c, y, x) - bg.at(0, c, y, x));
                sx += w * x;
                sy += w * y;
                sw += w;
            }
    return {sx / sw, sy / sw};
}

}  // namespace

TEST_CASE("static sprite renders identical frames") {
    auto cfg = small_cfg();
    FactorSpec s;
    s.start = {10, 12};
    Rng rng(3);
    const Video v = render_clip(s, cfg, rng);
    for (std::size_t f = 1; f < v.frames; ++f)
        for (std::size_t i = 0; i < v.frame_size(); ++i) CHECK(v.pixels[f * v.frame_size() + i] == v.pixels[i]);
    for (double p : v.pixels) CHECK((p >= 0.0 && p <= 1.0));
}

TEST_CASE("linear kinematics") {
    auto cfg = small_cfg();
    cfg.width = 32;
    FactorSpec s;
    s.start = {2, 10};
    s.velocity = {1, 0};
    const auto traj = sprite_trajectory(s, cfg, 16);
    for (std::size_t k = 0; k < 16; ++k) {
        CHECK(traj[k][0] == 2.0 + static_cast<double>(k));
        CHECK(traj[k][1] == 10.0);
    }
}

TEST_CASE("bounce matches scalar reflection simulation") {
    auto cfg = small_cfg();
    const double hmax = static_cast<double>(cfg.height - 1);
    FactorSpec s;
    s.motion = Motion::kBounce;
    s.start = {static_cast<double>(cfg.height) - 2.0, 5.0};
    s.velocity = {2.0, 0.0};
    const auto traj = sprite_trajectory(s, cfg, 40);
    double x = s.start[0], v = 2.0;
    for (std::size_t k = 0; k < 40; ++k) {
        CHECK(traj[k][0] == doctest::Approx(x).epsilon(1e-12));
        CHECK((traj[k][0] >= 0.0 && traj[k][0] <= hmax));
        double nx = x + v;
        if (nx > hmax) {
            nx = 2 * hmax - nx;
            v = -v;
        } else if (nx < 0) {
            nx = -nx;
            v = -v;
        }
        x = nx;
    }
}

TEST_CASE("orbit keeps a fixed radius and angular step") {
    auto cfg = small_cfg();
    FactorSpec s;
    s.motion = Motion::kOrbit;
    s.start = {16.5, 11.5};
    s.velocity = {0.3, 0.4};
    const auto traj = sprite_trajectory(s, cfg, 12);
    const double c = 11.5;
    for (std::size_t k = 1; k < traj.size(); ++k) {
        CHECK(std::hypot(traj[k][0] - c, traj[k][1] - c) == doctest::Approx(5.0).epsilon(1e-12));
        CHECK(std::hypot(traj[k][0] - traj[k - 1][0], traj[k][1] - traj[k - 1][1]) ==
              doctest::Approx(2 * 5.0 * std::sin(0.5 * 0.5 / 5.0)).epsilon(1e-12));
    }
}

TEST_CASE("start outside the frame is a validation error") {
    auto cfg = small_cfg();
    FactorSpec s;
    s.start = {-1, 3};
    Rng rng(0);
    CHECK_THROWS_AS(render_clip(s, cfg, rng), ValidationError);
}

TEST_CASE("corpus determinism and single clip") {
    auto cfg = small_cfg();
    const auto a = make_corpus(cfg);
    const auto b = make_corpus(cfg);
    REQUIRE(a.size() == cfg.num_clips);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].factors == b[i].factors);
        CHECK(a[i].video == b[i].video);
    }
    CHECK(corpus_hash(a) == corpus_hash(b));
    cfg.num_clips = 1;
    CHECK(make_corpus(cfg).size() == 1);
    cfg.seed = 1;
    CHECK(corpus_hash(make_corpus(cfg)) != corpus_hash(a));
}

TEST_CASE("factor histogram covers every vocabulary entry") {
    auto cfg = small_cfg();
    cfg.num_clips = 256;
    const auto f = draw_factors(cfg);
    std::vector<int> shapes(3), colors(4), bgs(4), motions(3);
    for (const auto &s : f) {
        ++shapes[s.shape_id];
        ++colors[s.color];
        ++bgs[s.background_id];
        ++motions[static_cast<std::size_t>(s.motion)];
        const double speed = std::hypot(s.velocity[0], s.velocity[1]);
        CHECK((speed >= cfg.vocab.min_speed && speed <= cfg.vocab.max_speed));
    }
    for (auto *h : {&shapes, &colors, &bgs, &motions})
        for (int n : *h) CHECK(n >= 1);
    cfg.vocab.colors = 0;
    CHECK_THROWS_AS(draw_factors(cfg), ConfigError);
}

TEST_CASE("subsampling stride arithmetic") {
    Video v(16, 3, 2, 2, 24.0);
    for (std::size_t f = 0; f < 16; ++f)
        for (std::size_t i = 0; i < v.frame_size(); ++i) v.pixels[f * v.frame_size() + i] = f;
    const Video id = subsample_frames(v, 24.0);
    CHECK(id == v);
    const Video s = subsample_frames(v, 6.0);
    REQUIRE(s.frames == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(s.at(k, 0, 0, 0) == 4.0 * k);
    CHECK(subsample_stride(24.0, 1.6) == 15);
    Video longv(240, 1, 1, 1, 24.0);
    CHECK(subsample_frames(longv, 1.6).frames == 16);
    CHECK_THROWS_AS(subsample_frames(v, 48.0), ValidationError);
}

TEST_CASE("least-squares velocity recovery on noise-free renders") {
    auto cfg = small_cfg();
    cfg.height = cfg.width = 32;
    cfg.texture_amplitude = 0.0;
    cfg.num_clips = 24;
    int fitted = 0;
    for (const auto &clip : make_corpus(cfg)) {
        if (clip.factors.motion != Motion::kLinear) continue;
        // Background-only reference frame.
        Video bg(1, 3, cfg.height, cfg.width, cfg.fps);
        for (std::size_t y = 0; y < cfg.height; ++y)
            for (std::size_t x = 0; x < cfg.width; ++x) {
                const auto c = background_color(clip.factors.background_id, x / 31.0, y / 31.0);
                for (std::size_t ch = 0; ch < 3; ++ch) bg.at(0, ch, y, x) = c[ch];
            }
        // Fit only while the sprite is fully inside the frame.
        const auto traj = sprite_trajectory(clip.factors, cfg, cfg.frames);
        const double r = cfg.sprite_radius() + 1;
        std::vector<double> ks, xs, ys;
        for (std::size_t k = 0; k < cfg.frames; ++k) {
            if (traj[k][0] < r || traj[k][0] > 31 - r || traj[k][1] < r || traj[k][1] > 31 - r) continue;
            const auto c = centroid(clip.video, bg, k);
            ks.push_back(k);
            xs.push_back(c[0]);
            ys.push_back(c[1]);
        }
        if (ks.size() < 4) continue;
        auto slope = [&](const std::vector<double> &y) {
            double mk = 0, my = 0;
            for (std::size_t i = 0; i < ks.size(); ++i) mk += ks[i], my += y[i];
            mk /= ks.size();
            my /= ks.size();
            double num = 0, den = 0;
            for (std::size_t i = 0; i < ks.size(); ++i) {
                num += (ks[i] - mk) * (y[i] - my);
                den += (ks[i] - mk) * (ks[i] - mk);
            }
            return num / den;
        };
        CHECK(std::abs(slope(xs) - clip.factors.velocity[0]) <= 0.1);
        CHECK(std::abs(slope(ys) - clip.factors.velocity[1]) <= 0.1);
        ++fitted;
    }
    CHECK(fitted >= 4);
}

TEST_CASE("corpus round-trips through disk") {
    auto cfg = small_cfg();
    cfg.num_clips = 3;
    const auto clips = make_corpus(cfg);
    const auto dir = std::filesystem::temp_directory_path() / "semgen_test_corpus";
    std::filesystem::remove_all(dir);
    save_corpus(dir, cfg, clips);
    const auto loaded = load_corpus(dir);
    REQUIRE(loaded.clips.size() == 3);
    CHECK(corpus_hash(loaded.clips) == corpus_hash(clips));
    for (std::size_t i = 0; i < 3; ++i) CHECK(loaded.clips[i].factors == clips[i].factors);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_corpus(dir), DependencyError);
}
