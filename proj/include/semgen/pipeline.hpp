#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "semgen/autoencoder.hpp"
#include "semgen/config.hpp"
#include "semgen/dit.hpp"
#include "semgen/flow.hpp"
#include "semgen/semantics.hpp"
#include "semgen/synthdata.hpp"
#include "semgen/trainer.hpp"

namespace semgen::pipeline {

enum class Stage { kLatentGen, kSemGen, kBaselineCt, kBaselineCtSwin, kBaselineVae2Stage };
Stage parse_stage(const std::string &s);
std::string stage_name(Stage s);

// Where the stage-one conditioning tokens come from. kVaeLatent replaces the
// semantic encoder by the frozen autoencoder: each semantic-grid cell is the
// concatenation of the standardized latent tokens it covers.
enum class Source { kNone, kEncoder, kVaeLatent };
std::string source_name(Source s);

struct StageConfig {
    Stage stage = Stage::kLatentGen;
    std::size_t steps = 1000;
    std::size_t batch = 4;
    double lr = 1e-3;
    double clip_norm = 1.0;
    double adam_eps = 1e-8;
    double final_lr_ratio = 0.05;
    std::size_t ckpt_every = 0;
    dit::AttentionLayout layout;
    std::size_t d_c = 8;
    double kl_weight = 1e-3;
    double noise_level = 0.1;
    double cond_dropout = 0.1;
    std::uint64_t seed = 0;
    // Model shape; c_target / c_sem / grid limits are filled in by the stage.
    dit::DitConfig model;

    void validate() const;
    // Budget fields shared by matched runs (steps, batch, optimizer, seed).
    nlohmann::json budget() const;
    nlohmann::json to_json() const;
    static StageConfig from_json(const nlohmann::json &j);
};

// Reads the dit.*, train.* and sem.* keys.
StageConfig stage_config(const Config &c, Stage stage);

// Hash of a budget: matched runs must agree.
std::uint64_t budget_hash(const StageConfig &c);

// ---- grid geometry ----
struct GridDims {
    std::size_t t = 0, h = 0, w = 0;
    std::size_t tokens() const { return t * h * w; }
};
GridDims latent_dims(std::size_t frames, std::size_t height, std::size_t width, const ae::AeConfig &cfg);
GridDims semantic_dims(std::size_t frames, std::size_t height, std::size_t width, const sem::SemConfig &cfg);

// Latent grid (t, h, w, c) -> (T, H, W, c * t/T * h/H * w/W): each coarse cell
// holds its fine tokens in raster order.
TokenGrid space_to_depth(const TokenGrid &g, const GridDims &coarse);

// ---- frozen modules ----
struct FrozenModules {
    const ae::AeParams *ae = nullptr;
    const sem::SemanticEncoderParams *encoder = nullptr;  // needed for Source::kEncoder
    // Semantic-grid geometry when no encoder is given (Source::kVaeLatent).
    sem::SemConfig sem_cfg;
    const sem::SemConfig &geometry() const { return encoder ? encoder->cfg : sem_cfg; }
};

// One clip with everything the generators consume, computed once from frozen
// modules: standardized AE mean latents and the raw conditioning grid.
struct Prepared {
    synth::FactorSpec factors;
    TokenGrid latent;
    TokenGrid raw;  // empty for Source::kNone
};
std::vector<Prepared> prepare(const std::vector<synth::Clip> &clips, const FrozenModules &frozen, Source source);

// ---- trained generators ----
struct LatentGenerator {
    StageConfig cfg;
    Source source = Source::kNone;
    dit::DitParams dit;
    sem::CompressorParams compressor;  // unused without a source
    // Per-channel statistics of compressor means over the training corpus;
    // the semantic generator works in these standardized units.
    std::vector<double> sem_mean, sem_std;
    // Frozen-module fingerprints at training time.
    std::uint64_t ae_hash = 0, encoder_hash = 0;

    bool has_semantics() const { return source != Source::kNone; }
    void save(const std::filesystem::path &path) const;
    static LatentGenerator load(const std::filesystem::path &path);
};

struct SemanticGenerator {
    StageConfig cfg;
    dit::DitParams dit;
    std::uint64_t compressor_hash = 0;

    void save(const std::filesystem::path &path) const;
    static SemanticGenerator load(const std::filesystem::path &path);
};

struct StageRun {
    std::filesystem::path run_dir;  // empty: in memory
    // Called at every checkpoint step with the step number (after the
    // parameters are rounded to their stored precision).
    std::function<void(std::size_t)> on_checkpoint;
    TrainResult *result = nullptr;
};

// Stage one: latent DiT plus compressor, jointly, with
// loss = cfm + kl_weight * KL(compressor posterior). Conditioning tokens are
// sampled from the compressor posterior. With Source::kNone this is the
// Base-CT / Base-CT-Swin baseline (no compressor, no semantic tokens).
LatentGenerator train_latent_generator(const std::vector<Prepared> &data, const StageConfig &cfg, Source source,
                                       const FrozenModules &frozen, const StageRun &run = {});

// Standardized compressor means, the stage-two targets.
TokenGrid semantic_target(const TokenGrid &raw, const LatentGenerator &latent);

// Stage two: a DiT over compressed semantic grids conditioned on factors only.
// The compressor is frozen; its hash before and after is checked.
SemanticGenerator train_semantic_generator(const std::vector<Prepared> &data, const StageConfig &cfg,
                                           const LatentGenerator &latent, const StageRun &run = {});

// A trained generator's weights replaced by those of an intermediate training
// checkpoint (ckpt_<step>.bin of the same stage). Deep copy.
SemanticGenerator semantic_generator_at(const SemanticGenerator &trained, const std::filesystem::path &ckpt);

// ---- inference ----
struct GenerateOptions {
    std::size_t sampler_steps = 50;
    double noise_level = 0.1;
    std::uint64_t seed = 0;
    std::size_t frames = 16;
    std::size_t height = 16, width = 16;
    double fps = 24.0;
};

// Velocity field of a latent generator for fixed conditioning.
flow::VelocityField latent_field(const LatentGenerator &g, const GridDims &dims, const TokenGrid *z_sem,
                                 const synth::FactorSpec *cond);

// Semantic sample (standardized units undone) -> corrupt -> latent sample ->
// decode. Baselines (no semantics) skip the first two steps. Deterministic in
// opts.seed. `sem` may be null only for a baseline.
synth::Video generate(const synth::FactorSpec *cond, const SemanticGenerator *sem, const LatentGenerator &latent,
                      const ae::AeParams &ae, const GenerateOptions &opts);

// Same as generate over opts.frames = F_long in one joint pass. Requires the
// swin_interleaved layout and F_long divisible by the latent/semantic factors.
synth::Video generate_long(const synth::FactorSpec *cond, const SemanticGenerator *sem,
                           const LatentGenerator &latent, const ae::AeParams &ae, const GenerateOptions &opts);

// Latent generation conditioned on the (compressed, corrupted) semantics of
// a reference clip instead of sampled ones.
synth::Video generate_from_reference(const synth::Video &reference, const synth::FactorSpec *cond,
                                     const LatentGenerator &latent, const FrozenModules &frozen,
                                     const GenerateOptions &opts);

// Throws ConfigError naming both artifacts when recorded dims disagree.
void check_compatible(const SemanticGenerator &sem, const LatentGenerator &latent, const ae::AeParams &ae);

// ---- matched-budget fairness ----
struct RunFingerprint {
    std::string name;
    std::uint64_t corpus_hash = 0;
    std::uint64_t budget_hash = 0;
    std::uint64_t data_order_hash = 0;
};
// FairnessError if any field but the name differs between runs.
void check_fairness(const std::vector<RunFingerprint> &runs);

// ---- run directories ----
// <root>/<name>; root from SEMGEN_ARTIFACTS when set, else `fallback`.
std::filesystem::path artifact_root(const std::filesystem::path &fallback);
void write_config_snapshot(const std::filesystem::path &run_dir, const nlohmann::json &config);

// samples/<stem>.bin (float32 frames with a dims header) and samples/<stem>.png
// (horizontal filmstrip).
void save_sample(const std::filesystem::path &run_dir, const std::string &stem, const synth::Video &v);
synth::Video load_sample(const std::filesystem::path &path);
void write_filmstrip_png(const std::filesystem::path &path, const synth::Video &v);

}  // namespace semgen::pipeline
