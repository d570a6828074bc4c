#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "semgen/semantics.hpp"
#include "semgen/synthdata.hpp"
#include "semgen/workspace.hpp"

namespace semgen::eval {

// ---- metrics ----
// All metrics are means over frames / pixels, so duplicating a clip in a
// batch leaves batch averages unchanged.

// Mean Rec.601 luma, in [0, 1].
double mean_luma(const synth::Video &v);
// Mean over k of mean |f_{k+1} - f_k|^2 over all channels and pixels, in [0, 1];
// 0 for a single frame. Flicker proxy.
double frame_diff_energy(const synth::Video &v);
// Background pixels are those whose temporal luma std is at most the median
// over the frame; the value is the mean Pearson correlation of the luma of
// those pixels over all frame pairs, in [-1, 1]. A frame pair with a constant
// frame counts 1 when both are constant and equal, else 0. 1 for one frame.
double bg_consistency(const synth::Video &v);

struct MetricFn {
    std::string name;
    std::function<double(const synth::Video &)> fn;
    double operator()(const synth::Video &v) const { return fn(v); }
};
// mean_luma | frame_diff_energy | bg_consistency.
MetricFn metric(const std::string &name);
std::vector<std::string> metric_names();
// 1 when the probe's shape class equals the target's, else 0.
MetricFn factor_match_metric(const synth::FactorSpec &target, const sem::SemanticEncoderParams &probe);

// ---- drift ----
struct DriftReport {
    std::string metric;
    double head = 0.0, tail = 0.0, delta = 0.0;
    double fraction = 0.15;
    std::size_t segment_frames = 0;
    nlohmann::json to_json() const;
};
// Segments are the floor(F * fraction) leading and trailing frames;
// delta = |M(head) - M(tail)|.
DriftReport drift(const synth::Video &v, const MetricFn &m, double fraction = 0.15);

// ---- probe scores over generated clips ----
struct ProbeScores {
    double factor_match = 0.0;  // probe shape == requested shape
    double coherent = 0.0;      // fraction with max shape probability >= threshold
    double bg_consistency = 0.0;
    double frame_diff_energy = 0.0;
    std::size_t clips = 0;
    nlohmann::json to_json() const;
};
ProbeScores probe_scores(const std::vector<synth::Video> &clips, const std::vector<synth::FactorSpec> &conds,
                         const sem::SemanticEncoderParams &probe, double coherence_threshold);

// Held-out evaluation conditions: the corpus factor distribution under seed
// corpus.seed + 1000, so they are disjoint from the training draw.
std::vector<synth::FactorSpec> eval_conditions(const Config &c, std::size_t n);
// Seed of generated clip i.
std::uint64_t sample_seed(std::size_t i);

// Generates one clip per condition; the first `keep` are saved as samples.
std::vector<synth::Video> generate_clips(const workflow::TrainedRun &run, const pipeline::SemanticGenerator *semantic,
                                         const ae::AeParams &ae, const std::vector<synth::FactorSpec> &conds,
                                         const pipeline::GenerateOptions &base, bool long_mode,
                                         const std::filesystem::path &sample_dir = {}, const std::string &stem = "",
                                         std::size_t keep = 2);

// Reads step,loss[,seconds] rows written by the trainer.
std::vector<double> read_losses(const std::filesystem::path &loss_csv);
// Mean loss over each interval (step - every, step] on the grid every, 2 every, ...
std::vector<std::pair<std::size_t, double>> loss_grid(const std::vector<double> &losses, std::size_t every);

// ---- experiments ----
// Each writes <out>/report.csv (system,checkpoint,step,metric,value),
// <out>/summary.json and filmstrips under <out>/samples, and returns the summary.

struct SystemSpec {
    std::string label;
    workflow::RunSpec run;
};

// Trains each system (resuming or reusing finished runs), checks matched
// budgets, then scores generated clips at the early and final stage-two
// checkpoints. Also writes <out>/curves.csv (system,stage,step,loss).
nlohmann::json convergence_experiment(workflow::Workspace &ws, const std::vector<SystemSpec> &systems,
                                      const std::filesystem::path &out);
// Default pair: SemanticGen vs the VAE-latent two-stage baseline, named
// ablation_run_name(prefix, d_c) (shared with the ablation) / <prefix>_vae.
std::vector<SystemSpec> convergence_systems(const std::string &prefix, std::size_t d_c);

// One two-stage run per d_c in `sweep`, matched budgets; one row block per d_c.
nlohmann::json compression_ablation(workflow::Workspace &ws, const std::vector<std::size_t> &sweep,
                                    const std::string &prefix, const std::filesystem::path &out);
// Run name of the d_c = d run in an ablation.
std::string ablation_run_name(const std::string &prefix, std::size_t d_c);

// K long clips per system under matched conditions and seeds; reports the
// mean drift per metric and system. The runs must exist (ConfigError otherwise).
nlohmann::json drift_experiment(workflow::Workspace &ws, const std::vector<std::string> &runs, std::size_t clips,
                                const std::filesystem::path &out);

// Stage one driven by the compressed semantics of reference clips: probe
// agreement between output and reference, pixel MSE to the reference, and
// the MSE between two texture draws of the reference factors (the floor
// below which an output would just copy the reference).
struct ReferenceReport {
    double shape_agreement = 0.0, motion_agreement = 0.0;
    double mse = 0.0, texture_floor = 0.0;
    std::size_t clips = 0;
    double agreement() const { return 0.5 * (shape_agreement + motion_agreement); }
    nlohmann::json to_json() const;
};
ReferenceReport reference_experiment(workflow::Workspace &ws, const std::string &run, std::size_t clips,
                                     const std::filesystem::path &out = {});

}  // namespace semgen::eval
