#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "semgen/grid.hpp"
#include "semgen/nn.hpp"
#include "semgen/synthdata.hpp"
#include "semgen/trainer.hpp"

namespace semgen::sem {

// 0.5 * sum_c (exp(logvar) + mean^2 - 1 - logvar), averaged over rows
// (tokens). Inputs are [tokens, channels]. Non-finite input is a NumericError.
Tensor kl_diag_gaussian(const Tensor &mean, const Tensor &logvar);

struct SemConfig {
    std::size_t patch = 8;
    std::size_t d = 64;
    std::size_t blocks = 1;
    std::size_t heads = 2;
    std::size_t chunk_frames = 4;  // F_s of one short clip; long clips encode chunk by chunk
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 3;
    double fps = 24.0;
    double semantic_fps = 6.0;
    double norm_eps = 1e-6;
    synth::Vocabulary vocab;

    // Output grid: one token per patch x patch area and per frame pair.
    std::size_t grid_h() const { return height / patch; }
    std::size_t grid_w() const { return width / patch; }
    // Input tokens are patch/2 squares; 2 x 2 x 2 neighbourhoods (frame pair,
    // 2 x 2 sub-patches) are merged into one output token.
    std::size_t token_px() const { return patch / 2; }
    std::size_t token_h() const { return height / token_px(); }
    std::size_t token_w() const { return width / token_px(); }
    std::size_t token_dim() const { return channels * token_px() * token_px(); }
    void validate() const;
};

struct EncoderBlock {
    Tensor norm1, norm2;
    nn::Linear wq, wk, wv, wo, up, down;
    void collect(ParamList &out, const std::string &prefix) const;
};

// Frozen toy semantic encoder: patch embedding, a small transformer over one
// chunk of subsampled frames, then a 2 x 2 x 2 merge (concatenate-then-
// project, written as eight projections that sum) which halves time and
// doubles the spatial patch. The factor heads are used for pretraining and by
// the factor probe.
struct SemanticEncoderParams {
    SemConfig cfg;
    nn::Linear embed;
    nn::Embedding pos;
    std::vector<EncoderBlock> blocks;
    std::vector<nn::Linear> merge;  // index (dt * 2 + dy) * 2 + dx
    Tensor out_norm;
    nn::Linear head_shape, head_color, head_background, head_motion, head_velocity;

    SemanticEncoderParams() = default;
    SemanticEncoderParams(const SemConfig &cfg, Rng &rng);
    ParamList trunk_params() const;
    ParamList params() const;  // trunk + heads
    std::uint64_t hash() const { return param_hash(trunk_params()); }
    void save(const std::filesystem::path &path) const;
    static SemanticEncoderParams load(const std::filesystem::path &path);
};

// Subsampled frames of one chunk, [chunk_frames * token_h * token_w, token_dim].
Tensor semantic_patches(const synth::Video &subsampled, std::size_t first_frame, const SemConfig &cfg);
// Merged tokens of one chunk, [chunk_frames/2 * gh * gw, d].
Tensor encode_chunk(const Tensor &patches, const SemanticEncoderParams &p);

// Full video at cfg.fps in; subsampled to cfg.semantic_fps inside.
TokenGrid sem_encode(const synth::Video &v, const SemanticEncoderParams &p);

struct FactorPrediction {
    std::vector<double> shape_prob, color_prob, background_prob, motion_prob;
    std::array<double, 2> velocity{0.0, 0.0};
    std::size_t shape() const;
    std::size_t color() const;
    std::size_t background() const;
    std::size_t motion() const;
};
FactorPrediction predict_factors(const synth::Video &v, const SemanticEncoderParams &p);

struct PretrainOptions {
    TrainOptions train;
    std::size_t batch = 4;
    double velocity_weight = 4.0;
    // Invariance term: mean squared difference between the token grids of a
    // clip and of the same clip with extra uniform pixel noise of this
    // amplitude. 0 disables.
    double consistency_weight = 4.0;
    double augment_amplitude = 0.1;
};
struct FactorScores {
    double shape_acc = 0, color_acc = 0, background_acc = 0, motion_acc = 0, velocity_mae = 0;
};
FactorScores score_factors(const std::vector<synth::Clip> &clips, const SemanticEncoderParams &p);

// Trains trunk and heads on ground-truth factors. Shape accuracy below
// chance on the training clips after the budget is a training failure.
SemanticEncoderParams pretrain_semantic_encoder(const std::vector<synth::Clip> &corpus, const SemConfig &cfg,
                                                const PretrainOptions &opts, TrainResult *result = nullptr);

// ---- compressor ----
struct CompressorParams {
    std::size_t d = 64;
    std::size_t d_c = 8;
    double logvar_min = -10.0;
    double logvar_max = 10.0;
    nn::Linear mean;
    nn::Linear logvar;
    bool frozen = false;

    CompressorParams() = default;
    CompressorParams(std::size_t d, std::size_t d_c, Rng &rng);
    ParamList params() const;
    std::uint64_t hash() const { return param_hash(params()); }
    void save(const std::filesystem::path &path) const;
    static CompressorParams load(const std::filesystem::path &path);
};

struct Compressed {
    Tensor z;       // [tokens, d_c]
    Tensor mean;
    Tensor logvar;  // clamped to [logvar_min, logvar_max]
};
Compressed compress_tensor(const Tensor &raw, const CompressorParams &p, Rng *rng);
struct CompressResult {
    TokenGrid grid;
    TokenGrid mean;
    TokenGrid logvar;
};
CompressResult compress(const TokenGrid &raw, const CompressorParams &p, Rng &rng, bool sample);

// z <- (1 - level) z + level * xi.
TokenGrid corrupt_semantics(const TokenGrid &z, double level, Rng &rng);
Tensor corrupt_tensor(const Tensor &z, double level, Rng &rng);

}  // namespace semgen::sem
