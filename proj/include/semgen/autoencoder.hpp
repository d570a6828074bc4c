#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "semgen/checkpoint.hpp"
#include "semgen/grid.hpp"
#include "semgen/nn.hpp"
#include "semgen/synthdata.hpp"
#include "semgen/trainer.hpp"

namespace semgen::ae {

struct AeConfig {
    std::size_t f_t = 2;
    std::size_t f_s = 4;
    std::size_t c_z = 8;
    std::size_t channels = 3;
    std::size_t hidden = 128;
    std::size_t blocks = 2;
    double beta = 1e-4;
    double logvar_min = -10.0;
    double logvar_max = 10.0;

    std::size_t patch_dim() const { return f_t * f_s * f_s * channels; }
    // Pixels per latent scalar.
    double compression_ratio() const { return static_cast<double>(patch_dim()) / static_cast<double>(c_z); }
    void check_video(std::size_t frames, std::size_t height, std::size_t width) const;
};

// Per-token MLP autoencoder over non-overlapping f_t x f_s x f_s patches.
struct AeParams {
    AeConfig cfg;
    nn::Linear enc_in;
    std::vector<nn::ResidualMlp> enc_blocks;
    nn::Linear enc_mean;
    nn::Linear enc_logvar;
    nn::Linear dec_in;
    std::vector<nn::ResidualMlp> dec_blocks;
    nn::Linear dec_out;  // bias starts at 0.5: a zero latent decodes to mid-gray
    // Per-channel latent statistics over the training corpus (mean encodings);
    // generators work on standardized latents.
    std::vector<double> latent_mean;
    std::vector<double> latent_std;
    bool frozen = false;

    AeParams() = default;
    AeParams(const AeConfig &cfg, Rng &rng);
    ParamList params() const;
    std::size_t param_count() const;
    std::uint64_t hash() const { return param_hash(params()); }

    void save(const std::filesystem::path &path) const;
    static AeParams load(const std::filesystem::path &path);
};

// [tokens, patch_dim] rows in grid raster order; patch layout (dt, c, dy, dx).
Tensor patchify(const synth::Video &v, const AeConfig &cfg);
synth::Video unpatchify(const std::vector<double> &rows, const AeConfig &cfg, std::size_t frames,
                        std::size_t height, std::size_t width, double fps);

struct Encoded {
    Tensor mean;    // [tokens, c_z]
    Tensor logvar;  // [tokens, c_z], clamped
    Tensor z;       // mean, or mean + exp(logvar / 2) * xi when sampling
};
Encoded encode_tensors(const Tensor &patches, const AeParams &p, Rng *rng);
// Unclamped decoder output [tokens, patch_dim].
Tensor decode_tensor(const Tensor &z, const AeParams &p);

TokenGrid ae_encode(const synth::Video &v, const AeParams &p, Rng &rng, bool sample);
synth::Video ae_decode(const TokenGrid &z, const AeParams &p, double fps = 24.0);

// Standardize / undo with the stored per-channel statistics.
TokenGrid standardize(const TokenGrid &z, const AeParams &p);
TokenGrid destandardize(const TokenGrid &z, const AeParams &p);

struct AeLoss {
    Tensor total;
    double recon = 0.0;
    double kl = 0.0;
};
AeLoss ae_loss(const std::vector<const synth::Video *> &batch, const AeParams &p, Rng &rng);

double psnr(const synth::Video &a, const synth::Video &b);
double video_mse(const synth::Video &a, const synth::Video &b);

struct AeTrainOptions {
    TrainOptions train;
    std::size_t batch = 2;
};
// Trains, fills latent statistics, freezes. `result` receives the loss curve.
AeParams train_autoencoder(const std::vector<synth::Clip> &corpus, const AeConfig &cfg,
                           const AeTrainOptions &opts, TrainResult *result = nullptr);

void compute_latent_stats(AeParams &p, const std::vector<synth::Clip> &corpus);

}  // namespace semgen::ae
