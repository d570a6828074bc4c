// semgen: corpus, training stages, sampling and experiment harnesses.
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semgen/errors.hpp"
#include "semgen/eval.hpp"
#include "semgen/io.hpp"
#include "semgen/workspace.hpp"

namespace fs = std::filesystem;
using namespace semgen;
using nlohmann::json;

namespace {

int exit_code(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::kConfig:
        case ErrorCategory::kValidation:
        case ErrorCategory::kDimension:
        case ErrorCategory::kFairness: return 2;
        case ErrorCategory::kDependency: return 3;
        case ErrorCategory::kNumeric: return 4;
        case ErrorCategory::kInternal: return 1;
    }
    return 1;
}

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string name;
    std::int64_t seed = -1;
    bool long_mode = false;
};

void add_common(CLI::App *cmd, Common &c, bool with_long = false) {
    cmd->add_option("-c,--config", c.config_path, "JSON config file (flat dotted keys or nested objects)");
    cmd->add_option("--set,overrides", c.overrides, "key=value overrides, applied last");
    cmd->add_option("-n,--name", c.name, "run name (run.name)");
    cmd->add_option("-s,--seed", c.seed, "seed (meaning depends on the verb)");
    if (with_long) cmd->add_flag("--long", c.long_mode, "long-video mode (corpus.frames_long, swin layout)");
}

Config load_config(const Common &c, const std::string &seed_key) {
    Config cfg;
    if (!c.config_path.empty()) cfg.merge_file(c.config_path);
    for (const auto &o : c.overrides) cfg.apply_override(o);
    if (!c.name.empty()) cfg.set("run.name", c.name);
    if (c.seed >= 0 && !seed_key.empty()) cfg.set(seed_key, c.seed);
    return cfg;
}

workflow::Workspace workspace(const Config &cfg) {
    return workflow::Workspace(cfg, pipeline::artifact_root(cfg.str("run.root")));
}

void emit(const json &j) { std::cout << j.dump() << std::endl; }

json loss_summary(const std::vector<double> &losses) {
    if (losses.empty()) return {{"steps_run", 0}};
    return {{"steps_run", losses.size()}, {"first_loss", losses.front()}, {"last_loss", losses.back()}};
}

pipeline::Stage baseline_stage(const std::string &kind) {
    if (kind == "ct") return pipeline::Stage::kBaselineCt;
    if (kind == "ct_swin") return pipeline::Stage::kBaselineCtSwin;
    if (kind == "vae2stage") return pipeline::Stage::kBaselineVae2Stage;
    throw ConfigError("unknown baseline '" + kind + "' (ct | ct_swin | vae2stage)");
}

void ensure_shared(workflow::Workspace &ws) {
    ws.autoencoder(true);
    ws.encoder(true);
    ws.probe(true);
}

int sample_verb(const Common &c, std::size_t count, bool long_mode) {
    const Config cfg = load_config(c, "sampler.seed");
    auto ws = workspace(cfg);
    const std::string name = cfg.str("run.name");
    const auto run = workflow::load_run(ws, name);
    const auto &ae = ws.autoencoder();
    const auto conds = eval::eval_conditions(cfg, count);
    const std::uint64_t seed = cfg.seed("sampler.seed");
    json files = json::array();
    for (std::size_t i = 0; i < count; ++i) {
        const auto opts = workflow::generate_options(cfg, long_mode, seed + i);
        const auto v = workflow::sample(run, nullptr, ae, &conds[i], opts, long_mode);
        const std::string stem = std::string(long_mode ? "long_" : "sample_") + "s" + std::to_string(seed) + "_" +
                                 std::to_string(i);
        pipeline::save_sample(ws.run_dir(name), stem, v);
        const fs::path bin = ws.run_dir(name) / "samples" / (stem + ".bin");
        files.push_back({{"path", bin.string()}, {"hash", hex64(io::file_hash(bin))}});
    }
    emit({{"verb", long_mode ? "sample-long" : "sample"}, {"run", name}, {"seed", seed}, {"samples", files}});
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"semgen: two-stage semantic-then-latent video generation on synthetic sprite clips"};
    app.require_subcommand(1);
    app.footer("Artifacts live under run.root, or $SEMGEN_ARTIFACTS when set.\n"
               "Exit codes: 0 ok, 1 internal error, 2 config/validation/dimension/fairness error, 3 missing dependency, 4 numeric failure.\n\n"
               "Config keys (defaults):\n" +
               Config::help_text());

    Common c;
    auto *make_corpus = app.add_subcommand("make-corpus", "render the synthetic corpus and print its hash");
    add_common(make_corpus, c, true);
    std::string corpus_out;
    make_corpus->add_option("-o,--out", corpus_out, "output directory (default <root>/corpus_<seed>)");

    auto *train_ae = app.add_subcommand("train-ae", "train and freeze the video autoencoder");
    add_common(train_ae, c);
    auto *pretrain = app.add_subcommand("pretrain-sem", "pretrain the semantic encoder and the factor probe");
    add_common(pretrain, c);
    auto *train_latent = app.add_subcommand("train-latent-gen", "stage one: latent generator + compressor");
    add_common(train_latent, c, true);
    auto *train_sem = app.add_subcommand("train-sem-gen", "stage two: semantic generator (compressor frozen)");
    add_common(train_sem, c, true);
    auto *train_base = app.add_subcommand("train-baseline", "train a baseline (ct | ct_swin | vae2stage)");
    add_common(train_base, c, true);
    std::string kind = "ct";
    train_base->add_option("-k,--kind", kind, "ct | ct_swin | vae2stage")->required();

    std::size_t count = 1;
    auto *sample = app.add_subcommand("sample", "generate short clips from a trained run");
    add_common(sample, c);
    sample->add_option("--count", count, "clips to generate");
    auto *sample_long = app.add_subcommand("sample-long", "generate long clips from a long-mode run");
    add_common(sample_long, c);
    sample_long->add_option("--count", count, "clips to generate");

    std::vector<std::string> drift_runs;
    std::string out;
    auto *eval_drift = app.add_subcommand("eval-drift", "drift of long clips from long-mode runs");
    add_common(eval_drift, c);
    eval_drift->add_option("--runs", drift_runs, "run names to compare")->required();
    eval_drift->add_option("-o,--out", out, "report directory (default <root>/drift)");
    std::size_t clips = 0;
    eval_drift->add_option("--clips", clips, "long clips per run (default eval.clips)");

    std::string prefix = "ablate";
    auto *ablate = app.add_subcommand("ablate-compression", "two-stage runs over the eval.sweep d_c values");
    add_common(ablate, c);
    ablate->add_option("--prefix", prefix, "run-name prefix");
    ablate->add_option("-o,--out", out, "report directory (default <root>/<prefix>_ablation)");

    auto *compare = app.add_subcommand("compare-spaces", "semantic-space vs VAE-latent-space two-stage runs");
    add_common(compare, c);
    std::string compare_prefix = "compare";
    compare->add_option("--prefix", compare_prefix, "run-name prefix");
    compare->add_option("-o,--out", out, "report directory (default <root>/<prefix>_convergence)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (make_corpus->parsed()) {
            const Config cfg = load_config(c, "corpus.seed");
            const auto cc = workflow::corpus_config(cfg);
            const auto clips_ = synth::make_corpus(cc, c.long_mode);
            const fs::path dir = corpus_out.empty()
                                     ? pipeline::artifact_root(cfg.str("run.root")) /
                                           ("corpus_" + std::to_string(cc.seed) + (c.long_mode ? "_long" : ""))
                                     : fs::path(corpus_out);
            synth::save_corpus(dir, cc, clips_, c.long_mode);
            emit({{"verb", "make-corpus"},
                  {"dir", dir.string()},
                  {"clips", clips_.size()},
                  {"corpus_hash", hex64(synth::corpus_hash(clips_))}});
        } else if (train_ae->parsed()) {
            auto ws = workspace(load_config(c, "ae.seed"));
            const auto &ae = ws.autoencoder(true);
            double p = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                Rng r(0);
                const auto &v = ws.corpus()[i].video;
                p += ae::psnr(v, ae::ae_decode(ae::ae_encode(v, ae, r, false), ae, v.fps)) / 4.0;
            }
            emit({{"verb", "train-ae"}, {"ae_hash", hex64(ae.hash())}, {"train_psnr_db", p}});
        } else if (pretrain->parsed()) {
            auto ws = workspace(load_config(c, "sem.seed"));
            const auto &enc = ws.encoder(true);
            const auto &probe = ws.probe(true);
            synth::CorpusConfig held = workflow::corpus_config(ws.config());
            held.num_clips = 48;
            held.seed += 777;
            const auto s = sem::score_factors(synth::make_corpus(held), enc);
            emit({{"verb", "pretrain-sem"},
                  {"encoder_hash", hex64(enc.hash())},
                  {"probe_hash", hex64(probe.hash())},
                  {"held_out_shape_acc", s.shape_acc},
                  {"held_out_motion_acc", s.motion_acc}});
        } else if (train_latent->parsed() || train_sem->parsed() || train_base->parsed()) {
            auto ws = workspace(load_config(c, "train.seed"));
            workflow::RunSpec spec;
            spec.name = ws.config().str("run.name");
            spec.long_mode = c.long_mode;
            spec.stage = train_base->parsed() ? baseline_stage(kind) : pipeline::Stage::kLatentGen;
            json res = {{"run", spec.name}, {"dir", ws.run_dir(spec.name).string()}};
            if (train_latent->parsed()) {
                TrainResult r;
                workflow::train_stage_one(ws, spec, &r);
                res["verb"] = "train-latent-gen";
                res["latent"] = loss_summary(r.losses);
            } else if (train_sem->parsed()) {
                TrainResult r;
                workflow::train_stage_two(ws, spec, &r);
                res["verb"] = "train-sem-gen";
                res["semantic"] = loss_summary(r.losses);
            } else {
                const auto run = workflow::train_run(ws, spec);
                res["verb"] = "train-baseline";
                res["stage"] = pipeline::stage_name(spec.stage);
                res["latent"] = loss_summary(run.latent_losses);
                if (run.semantic) res["semantic"] = loss_summary(run.semantic_losses);
            }
            res["data_order_hash"] = hex64(workflow::load_fingerprint(ws, spec.name).data_order_hash);
            emit(res);
        } else if (sample->parsed()) {
            return sample_verb(c, count, false);
        } else if (sample_long->parsed()) {
            return sample_verb(c, count, true);
        } else if (eval_drift->parsed()) {
            auto ws = workspace(load_config(c, ""));
            const fs::path dir = out.empty() ? ws.root() / "drift" : fs::path(out);
            emit(eval::drift_experiment(ws, drift_runs, clips ? clips : ws.config().size("eval.clips"), dir));
        } else if (ablate->parsed()) {
            auto ws = workspace(load_config(c, "train.seed"));
            ensure_shared(ws);
            std::vector<std::size_t> sweep;
            for (auto d : ws.config().int_list("eval.sweep")) {
                if (d <= 0) throw ConfigError("eval.sweep entries must be positive");
                sweep.push_back(static_cast<std::size_t>(d));
            }
            const fs::path dir = out.empty() ? ws.root() / (prefix + "_ablation") : fs::path(out);
            emit(eval::compression_ablation(ws, sweep, prefix, dir));
        } else if (compare->parsed()) {
            auto ws = workspace(load_config(c, "train.seed"));
            ensure_shared(ws);
            const fs::path dir = out.empty() ? ws.root() / (compare_prefix + "_convergence") : fs::path(out);
            emit(eval::convergence_experiment(ws, eval::convergence_systems(compare_prefix, ws.config().size("sem.d_c")), dir));
        }
    } catch (const Error &e) {
        std::cerr << "error: " << category_name(e.category()) << ": " << e.what() << std::endl;
        return exit_code(e.category());
    } catch (const std::exception &e) {
        std::cerr << "error: internal: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
