#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "semgen/errors.hpp"
#include "semgen/pipeline.hpp"

using namespace semgen;
using namespace semgen::pipeline;

namespace {

synth::CorpusConfig desk_corpus(std::size_t clips) {
    synth::CorpusConfig c;
    c.num_clips = clips;
    c.height = c.width = 16;
    c.frames = 16;
    c.sprite_scale = 0.25;
    return c;
}

// Untrained but frozen modules with real latent statistics: enough for every
// contract that does not depend on sample quality.
struct Fixture {
    std::vector<synth::Clip> clips = synth::make_corpus(desk_corpus(8));
    ae::AeParams ae;
    sem::SemanticEncoderParams enc;

    Fixture() {
        ae::AeConfig ac;
        ac.hidden = 16;
        ac.blocks = 1;
        Rng rng(1);
        ae = ae::AeParams(ac, rng);
        ae::compute_latent_stats(ae, clips);
        ae.frozen = true;
        sem::SemConfig sc;
        sc.height = sc.width = 16;
        sc.d = 16;
        enc = sem::SemanticEncoderParams(sc, rng);
    }
    FrozenModules frozen() const { return {&ae, &enc, enc.cfg}; }
};

StageConfig tiny_stage(Stage s, std::size_t steps = 4) {
    StageConfig c;
    c.stage = s;
    c.steps = steps;
    c.batch = 2;
    c.lr = 1e-3;
    c.d_c = 4;
    c.model.c_model = 16;
    c.model.blocks = 2;
    c.model.heads = 2;
    c.model.mlp_ratio = 2;
    c.model.temb_dim = 8;
    c.model.frame_w = c.model.frame_h = 16;
    c.layout = {s == Stage::kBaselineCtSwin ? dit::LayoutMode::kSwinInterleaved : dit::LayoutMode::kFull, 4};
    return c;
}

StageRun recording(TrainResult *r) {
    StageRun run;
    run.result = r;
    return run;
}

}  // namespace

TEST_CASE("desk geometry: one semantic token per sixteen latent tokens") {
    Fixture f;
    const auto prep = prepare(f.clips, f.frozen(), Source::kEncoder);
    REQUIRE(prep.size() == 8);
    const auto &p = prep[0];
    CHECK(p.latent.t == 8);
    CHECK(p.latent.h == 4);
    CHECK(p.latent.w == 4);
    CHECK(p.raw.t == 2);
    CHECK(p.raw.h == 2);
    CHECK(p.raw.w == 2);
    CHECK(static_cast<double>(p.raw.tokens()) / static_cast<double>(p.latent.tokens()) == doctest::Approx(1.0 / 16));
}

TEST_CASE("VAE-latent conditioning has the semantic token count") {
    Fixture f;
    const auto sem = prepare(f.clips, f.frozen(), Source::kEncoder);
    const auto vae = prepare(f.clips, f.frozen(), Source::kVaeLatent);
    CHECK(vae[0].raw.tokens() == sem[0].raw.tokens());
    // 8 channels x (8/2) x (4/2) x (4/2) fine tokens per coarse cell.
    CHECK(vae[0].raw.channels == 8 * 16);
    CHECK(prepare(f.clips, f.frozen(), Source::kNone)[0].raw.tokens() == 0);
}

TEST_CASE("space_to_depth matches an index oracle") {
    TokenGrid g(4, 2, 2, 3);
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<double>(i);
    const TokenGrid s = space_to_depth(g, {2, 1, 1});
    CHECK(s.t == 2);
    CHECK(s.h == 1);
    CHECK(s.channels == 3 * 2 * 2 * 2);
    // Coarse cell T holds fine tokens (2T + dt, dy, dx) in raster order.
    for (std::size_t T = 0; T < 2; ++T)
        for (std::size_t k = 0; k < 8; ++k)
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t fine = (2 * T) * 4 + k;  // raster index of the fine token
                CHECK(s.at(T, k * 3 + c) == g.at(fine, c));
            }
    CHECK_THROWS_AS(space_to_depth(g, {3, 1, 1}), DimensionError);
}

TEST_CASE("step-0 loss of the zero-initialized head is 1 + E[z0^2]") {
    Fixture f;
    const auto prep = prepare(f.clips, f.frozen(), Source::kEncoder);
    double z2 = 0.0;
    std::size_t n = 0;
    for (const auto &p : prep)
        for (double v : p.latent.values) {
            z2 += v * v;
            ++n;
        }
    const double oracle = 1.0 + z2 / static_cast<double>(n);
    CHECK(oracle == doctest::Approx(2.0).epsilon(0.01));  // standardized latents
    double acc = 0.0;
    const int runs = 8;
    for (int s = 0; s < runs; ++s) {
        auto c = tiny_stage(Stage::kLatentGen, 1);
        c.kl_weight = 0.0;
        c.batch = 4;
        c.seed = static_cast<std::uint64_t>(s);
        TrainResult res;
        train_latent_generator(prep, c, Source::kEncoder, f.frozen(), recording(&res));
        REQUIRE(res.losses.size() == 1);
        acc += res.losses[0];
    }
    CHECK(acc / runs == doctest::Approx(oracle).epsilon(0.08));
}

TEST_CASE("frozen modules keep their hashes; the compressor is frozen for stage two") {
    Fixture f;
    const auto prep = prepare(f.clips, f.frozen(), Source::kEncoder);
    const auto ae_h = f.ae.hash(), enc_h = f.enc.hash();
    const auto latent = train_latent_generator(prep, tiny_stage(Stage::kLatentGen), Source::kEncoder, f.frozen());
    CHECK(f.ae.hash() == ae_h);
    CHECK(f.enc.hash() == enc_h);
    CHECK(latent.ae_hash == ae_h);
    CHECK(latent.encoder_hash == enc_h);
    CHECK(latent.compressor.frozen);
    const auto comp_h = latent.compressor.hash();
    const auto semgen = train_semantic_generator(prep, tiny_stage(Stage::kSemGen), latent);
    CHECK(latent.compressor.hash() == comp_h);
    CHECK(semgen.compressor_hash == comp_h);

    // An unfrozen autoencoder is refused.
    ae::AeParams loose = f.ae;
    loose.frozen = false;
    CHECK_THROWS_AS(train_latent_generator(prep, tiny_stage(Stage::kLatentGen), Source::kEncoder,
                                           {&loose, &f.enc, f.enc.cfg}),
                    ConfigError);
}

TEST_CASE("layout guard: baselines take no semantic tokens") {
    Fixture f;
    const auto prep = prepare(f.clips, f.frozen(), Source::kEncoder);
    CHECK_THROWS_AS(train_latent_generator(prep, tiny_stage(Stage::kBaselineCt), Source::kEncoder, f.frozen()),
                    InternalError);
    const auto none = prepare(f.clips, f.frozen(), Source::kNone);
    CHECK_THROWS_AS(train_latent_generator(none, tiny_stage(Stage::kLatentGen), Source::kNone, f.frozen()),
                    ConfigError);
    const auto ct = train_latent_generator(none, tiny_stage(Stage::kBaselineCt, 1), Source::kNone, f.frozen());
    const TokenGrid z(2, 2, 2, 4);
    CHECK_THROWS_AS(latent_field(ct, {8, 4, 4}, &z, nullptr), InternalError);
}

TEST_CASE("matched budgets give identical data-order hashes across conditioning sources") {
    Fixture f;
    const auto enc = prepare(f.clips, f.frozen(), Source::kEncoder);
    const auto vae = prepare(f.clips, f.frozen(), Source::kVaeLatent);
    const auto none = prepare(f.clips, f.frozen(), Source::kNone);
    TrainResult a, b, c, d;
    train_latent_generator(enc, tiny_stage(Stage::kLatentGen), Source::kEncoder, f.frozen(), recording(&a));
    train_latent_generator(vae, tiny_stage(Stage::kBaselineVae2Stage), Source::kVaeLatent, f.frozen(),
                           recording(&b));
    train_latent_generator(none, tiny_stage(Stage::kBaselineCtSwin), Source::kNone, f.frozen(), recording(&c));
    auto other = tiny_stage(Stage::kLatentGen);
    other.seed = 9;
    train_latent_generator(enc, other, Source::kEncoder, f.frozen(), recording(&d));
    CHECK(a.data_order_hash == b.data_order_hash);
    CHECK(a.data_order_hash == c.data_order_hash);
    CHECK(a.data_order_hash != d.data_order_hash);
    CHECK(budget_hash(tiny_stage(Stage::kLatentGen)) == budget_hash(tiny_stage(Stage::kBaselineVae2Stage)));
    CHECK(budget_hash(tiny_stage(Stage::kLatentGen)) != budget_hash(other));
}

TEST_CASE("fairness check names the differing field") {
    const RunFingerprint a{"a", 1, 2, 3};
    RunFingerprint b{"b", 1, 2, 3};
    CHECK_NOTHROW(check_fairness({a, b}));
    b.data_order_hash = 4;
    try {
        check_fairness({a, b});
        FAIL("expected a fairness error");
    } catch (const FairnessError &e) {
        CHECK(std::string(e.what()).find("data") != std::string::npos);
    }
}

TEST_CASE("generation is deterministic in the seed and long mode needs windows") {
    Fixture f;
    const auto prep = prepare(f.clips, f.frozen(), Source::kEncoder);
    const auto latent = train_latent_generator(prep, tiny_stage(Stage::kLatentGen, 2), Source::kEncoder, f.frozen());
    const auto semgen = train_semantic_generator(prep, tiny_stage(Stage::kSemGen, 2), latent);
    GenerateOptions o;
    o.sampler_steps = 4;
    o.seed = 3;
    const auto &cond = f.clips[0].factors;
    const auto a = generate(&cond, &semgen, latent, f.ae, o);
    const auto b = generate(&cond, &semgen, latent, f.ae, o);
    CHECK(a.frames == 16);
    CHECK(a.pixels == b.pixels);
    o.seed = 4;
    CHECK(generate(&cond, &semgen, latent, f.ae, o).pixels != a.pixels);
    CHECK_THROWS_AS(generate(&cond, nullptr, latent, f.ae, o), DependencyError);

    o.frames = 64;
    CHECK_THROWS_AS(generate_long(&cond, &semgen, latent, f.ae, o), ConfigError);  // full attention
    auto swin = tiny_stage(Stage::kLatentGen, 2);
    swin.layout.mode = dit::LayoutMode::kSwinInterleaved;
    auto lc = desk_corpus(2);
    lc.frames_long = 64;
    const auto long_prep = prepare(synth::make_corpus(lc, true), f.frozen(), Source::kEncoder);
    REQUIRE(long_prep[0].latent.t == 32);
    const auto latent_swin = train_latent_generator(long_prep, swin, Source::kEncoder, f.frozen());
    const auto sem_swin = train_semantic_generator(long_prep, tiny_stage(Stage::kSemGen, 2), latent_swin);
    const auto long_clip = generate_long(&cond, &sem_swin, latent_swin, f.ae, o);
    CHECK(long_clip.frames == 64);
    o.frames = 20;  // 10 latent steps, not a multiple of T_w = 4
    CHECK_THROWS_AS(generate_long(&cond, &sem_swin, latent_swin, f.ae, o), ConfigError);
}

TEST_CASE("generators round-trip through disk") {
    Fixture f;
    const auto prep = prepare(f.clips, f.frozen(), Source::kEncoder);
    const auto latent = train_latent_generator(prep, tiny_stage(Stage::kLatentGen, 1), Source::kEncoder, f.frozen());
    const auto dir = std::filesystem::temp_directory_path() / "semgen_test_pipeline";
    std::filesystem::create_directories(dir);
    latent.save(dir / "latent.bin");
    const auto back = LatentGenerator::load(dir / "latent.bin");
    CHECK(back.dit.hash() == latent.dit.hash());
    CHECK(back.compressor.hash() == latent.compressor.hash());
    CHECK(back.sem_mean.size() == latent.sem_mean.size());
    CHECK(back.ae_hash == latent.ae_hash);
    CHECK_THROWS_AS(SemanticGenerator::load(dir / "latent.bin"), ConfigError);
    std::filesystem::remove_all(dir);
}
