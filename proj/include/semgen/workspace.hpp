#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "semgen/config.hpp"
#include "semgen/pipeline.hpp"

// Config -> module options, shared frozen artifacts and named generator runs
// under one artifact root:
//   <root>/ae/            autoencoder (ae.bin, ckpt_*.bin, loss.csv, config.json)
//   <root>/encoder/       semantic encoder
//   <root>/probe/         independently seeded factor probe
//   <root>/<run>/         one generator run: config.json, fingerprint.json,
//                         latent/ and semantic/ stage dirs, latent.bin,
//                         semantic.bin, samples/
namespace semgen::workflow {

synth::CorpusConfig corpus_config(const Config &c);
synth::CorpusConfig pretrain_corpus_config(const Config &c);
ae::AeConfig ae_config(const Config &c);
ae::AeTrainOptions ae_options(const Config &c);
sem::SemConfig sem_config(const Config &c);
sem::PretrainOptions sem_options(const Config &c, std::uint64_t seed);

// Source of the conditioning tokens a stage trains with.
pipeline::Source stage_source(pipeline::Stage s);
bool two_stage(pipeline::Stage s);

class Workspace {
   public:
    Workspace(Config cfg, std::filesystem::path root);

    const Config &config() const { return cfg_; }
    const std::filesystem::path &root() const { return root_; }
    std::filesystem::path run_dir(const std::string &run) const { return root_ / run; }

    // Rendered once per process; deterministic in the corpus keys.
    const std::vector<synth::Clip> &corpus(bool long_mode = false);

    // Frozen modules: loaded from the root, or trained and saved when `train`
    // is set and the artifact is missing (resuming from its checkpoints).
    // Missing without `train` is a DependencyError; an artifact built under
    // different config keys is a ConfigError.
    const ae::AeParams &autoencoder(bool train = false);
    const sem::SemanticEncoderParams &encoder(bool train = false);
    const sem::SemanticEncoderParams &probe(bool train = false);
    pipeline::FrozenModules frozen(pipeline::Source source, bool train = false);

    // Prepared training data, memoized per (source, mode).
    const std::vector<pipeline::Prepared> &prepared(pipeline::Source source, bool long_mode, bool train = false);

    // Stage configuration of a run in this workspace. Long mode uses
    // train.long_batch and forces the swin_interleaved layout on stage one.
    pipeline::StageConfig stage_config(pipeline::Stage stage, bool long_mode,
                                       const nlohmann::json &overrides = nlohmann::json::object()) const;

   private:
    Config cfg_;
    std::filesystem::path root_;
    std::optional<std::vector<synth::Clip>> short_, long_;
    std::unique_ptr<ae::AeParams> ae_;
    std::unique_ptr<sem::SemanticEncoderParams> encoder_, probe_;
    std::vector<std::pair<std::string, std::vector<pipeline::Prepared>>> prepared_;
};

struct RunSpec {
    std::string name;
    pipeline::Stage stage = pipeline::Stage::kLatentGen;
    bool long_mode = false;
    // Flat key/value config overrides for this run only (e.g. sem.d_c).
    nlohmann::json overrides = nlohmann::json::object();
};

struct TrainedRun {
    pipeline::LatentGenerator latent;
    std::optional<pipeline::SemanticGenerator> semantic;
    pipeline::RunFingerprint fingerprint;  // of stage one
    std::vector<double> latent_losses, semantic_losses;
};

// Trains (or resumes, or loads when finished) stage one and, for two-stage
// pipelines, stage two. Writes config.json and fingerprint.json.
TrainedRun train_run(Workspace &ws, const RunSpec &spec);
// Stage one only / stage two only; stage two needs a finished stage one.
pipeline::LatentGenerator train_stage_one(Workspace &ws, const RunSpec &spec, TrainResult *result = nullptr);
pipeline::SemanticGenerator train_stage_two(Workspace &ws, const RunSpec &spec, TrainResult *result = nullptr);

// Loads a finished run; DependencyError when a stage is missing.
TrainedRun load_run(const Workspace &ws, const std::string &name);
pipeline::RunFingerprint load_fingerprint(const Workspace &ws, const std::string &name);

// Stage-two weights at an intermediate checkpoint of the run.
pipeline::SemanticGenerator semantic_at_step(const Workspace &ws, const TrainedRun &run, const std::string &name,
                                             std::size_t step);

pipeline::GenerateOptions generate_options(const Config &c, bool long_mode, std::uint64_t seed);

// generate / generate_long for a trained run.
synth::Video sample(const TrainedRun &run, const pipeline::SemanticGenerator *semantic, const ae::AeParams &ae,
                    const synth::FactorSpec *cond, const pipeline::GenerateOptions &opts, bool long_mode);

}  // namespace semgen::workflow
