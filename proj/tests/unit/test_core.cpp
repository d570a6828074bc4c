#include <filesystem>

#include "doctest.h"
#include "semgen/checkpoint.hpp"
#include "semgen/config.hpp"
#include "semgen/errors.hpp"
#include "semgen/grid.hpp"
#include "semgen/trainer.hpp"

using namespace semgen;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string &name) {
    const fs::path d = fs::temp_directory_path() / ("semgen_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

// Least squares on a fixed random regression problem.
struct Regression {
    Tensor x, y, w;
    ParamList params;
    explicit Regression(std::uint64_t seed) {
        Rng rng(seed);
        x = Tensor::randn({32, 4}, rng);
        y = add(matmul(x, Tensor::randn({4, 2}, rng)), Tensor::randn({32, 2}, rng, 0.1));
        w = Tensor::randn({4, 2}, rng, 0.1, true);
        params.push_back({"w", w});
    }
    StepFn step() {
        return [this](std::size_t, Rng &rng, Fnv1a &order) {
            std::vector<std::size_t> rows;
            for (int i = 0; i < 8; ++i) rows.push_back(rng.below(32));
            for (auto r : rows) order.update(&r, sizeof r);
            const Tensor l = mse(matmul(gather_rows(x, rows), w), gather_rows(y, rows));
            l.backward();
            return l.item();
        };
    }
};

}  // namespace

TEST_CASE("config: defaults, overrides and type checks") {
    Config c;
    CHECK(c.size("ae.c_z") == 8);
    CHECK(c.real("sem.kl_weight") == doctest::Approx(1e-3));
    c.apply_override("dit.layout=swin_interleaved");
    CHECK(c.str("dit.layout") == "swin_interleaved");
    c.apply_override("train.lr=0.01");
    CHECK(c.real("train.lr") == doctest::Approx(0.01));
    c.apply_override("train.lr=1");  // real key accepts an integer literal
    CHECK(c.real("train.lr") == doctest::Approx(1.0));
    CHECK_THROWS_AS(c.apply_override("ae.c_z=2.5"), ConfigError);
    CHECK_THROWS_AS(c.apply_override("nope.key=1"), ConfigError);
    CHECK_THROWS_AS(c.apply_override("no_equals"), ConfigError);
    c.merge(nlohmann::json{{"sem", {{"d_c", 4}}}});
    CHECK(c.size("sem.d_c") == 4);
    CHECK(c.int_list("eval.sweep") == std::vector<std::int64_t>{32, 8, 2});
    CHECK(c.subset("sampler").size() == 2);
    CHECK_THROWS_AS(c.merge_file("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config: help text lists every key") {
    const auto text = Config::help_text();
    for (const auto &k : Config::registry()) CHECK(text.find(k.key) != std::string::npos);
}

TEST_CASE("checkpoint: round trip and errors") {
    const auto dir = fresh_dir("ckpt");
    Rng rng(1);
    nn::Linear lin(3, 2, rng);
    ParamList params;
    lin.collect(params, "lin");
    Checkpoint ck;
    ck.meta["note"] = "x";
    ck.add_params(params, "m.");
    save_checkpoint(dir / "a.bin", ck);

    const auto back = load_checkpoint(dir / "a.bin");
    CHECK(back.meta["note"] == "x");
    Rng rng2(2);
    nn::Linear other(3, 2, rng2);
    ParamList target;
    other.collect(target, "lin");
    back.load_params(target, "m.");
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(other.weight.data()[i] == doctest::Approx(lin.weight.data()[i]).epsilon(1e-6));
    }
    nn::Linear wrong(2, 2, rng2);
    ParamList bad;
    wrong.collect(bad, "lin");
    CHECK_THROWS_AS(back.load_params(bad, "m."), ConfigError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), DependencyError);
}

TEST_CASE("grid: tensor and file round trips") {
    const auto dir = fresh_dir("grid");
    TokenGrid g(2, 1, 3, 2);
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = 0.25 * static_cast<double>(i);
    CHECK(TokenGrid::from_tensor(g.tensor(), 2, 1, 3) == g);
    CHECK(g.index(1, 0, 2) == 5);
    save_grid(dir / "g.bin", g);
    CHECK(load_grid(dir / "g.bin") == g);
}

TEST_CASE("trainer: smoothed loss decreases") {
    Regression r(3);
    TrainOptions o;
    o.steps = 400;
    o.hyper.lr = 0.05;
    const auto res = run_training(r.params, o, r.step());
    REQUIRE(res.losses.size() == 400);
    const auto s = smooth(res.losses, 50);
    CHECK(s.back() < 0.1 * s.front());
}

TEST_CASE("trainer: an interrupted run resumes to the identical loss curve") {
    const auto dir_a = fresh_dir("resume_a");
    const auto dir_b = fresh_dir("resume_b");
    TrainOptions o;
    o.stage = "reg";
    o.steps = 60;
    o.ckpt_every = 20;
    o.hyper.lr = 0.02;
    o.final_lr_ratio = 0.1;
    o.seed = 9;

    Regression full(4);
    o.run_dir = dir_a;
    const auto straight = run_training(full.params, o, full.step());

    // Simulate a run killed between step 40 and 60: drop the last checkpoint.
    fs::remove_all(dir_b);
    fs::copy(dir_a, dir_b);
    fs::remove(dir_b / "ckpt_60.bin");
    Regression resumed(4);
    o.run_dir = dir_b;
    const auto rest = run_training(resumed.params, o, resumed.step());
    CHECK(rest.resumed_from == 40);
    REQUIRE(rest.losses.size() == straight.losses.size());
    for (std::size_t i = 0; i < straight.losses.size(); ++i) CHECK(rest.losses[i] == straight.losses[i]);
    CHECK(rest.data_order_hash == straight.data_order_hash);
    for (std::size_t i = 0; i < 8; ++i) CHECK(resumed.w.data()[i] == full.w.data()[i]);
    CHECK(fs::exists(dir_b / "loss.csv"));

    o.stage = "other";
    Regression again(4);
    CHECK_THROWS_AS(run_training(again.params, o, again.step()), ConfigError);
}

TEST_CASE("trainer: non-finite loss aborts with the step") {
    Regression r(5);
    TrainOptions o;
    o.steps = 10;
    const StepFn bad = [](std::size_t step, Rng &, Fnv1a &) { return step == 3 ? std::nan("") : 1.0; };
    try {
        run_training(r.params, o, bad);
        FAIL("expected TrainingAbort");
    } catch (const TrainingAbort &e) {
        CHECK(e.step == 3);
    }
}
