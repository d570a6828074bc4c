#include "semgen/workspace.hpp"

#include "semgen/errors.hpp"
#include "semgen/io.hpp"

namespace semgen::workflow {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::Source;
using pipeline::Stage;

synth::CorpusConfig corpus_config(const Config &c) {
    synth::CorpusConfig s;
    s.num_clips = c.size("corpus.num_clips");
    s.frames = c.size("corpus.frames");
    s.frames_long = c.size("corpus.frames_long");
    s.height = c.size("corpus.height");
    s.width = c.size("corpus.width");
    s.fps = c.real("corpus.fps");
    s.semantic_fps = c.real("corpus.semantic_fps");
    s.texture_amplitude = c.real("corpus.texture_amplitude");
    s.sprite_scale = c.real("corpus.sprite_scale");
    s.vocab.min_speed = c.real("corpus.min_speed");
    s.vocab.max_speed = c.real("corpus.max_speed");
    s.seed = c.seed("corpus.seed");
    s.validate();
    return s;
}

synth::CorpusConfig pretrain_corpus_config(const Config &c) {
    synth::CorpusConfig s = corpus_config(c);
    s.num_clips = c.size("sem.pretrain_clips");
    s.seed = c.seed("sem.pretrain_seed");
    return s;
}

ae::AeConfig ae_config(const Config &c) {
    ae::AeConfig a;
    a.f_t = c.size("ae.f_t");
    a.f_s = c.size("ae.f_s");
    a.c_z = c.size("ae.c_z");
    a.hidden = c.size("ae.hidden");
    a.blocks = c.size("ae.blocks");
    a.beta = c.real("ae.beta");
    return a;
}

ae::AeTrainOptions ae_options(const Config &c) {
    ae::AeTrainOptions o;
    o.batch = c.size("ae.batch");
    o.train.stage = "ae";
    o.train.steps = c.size("ae.steps");
    o.train.ckpt_every = c.size("train.ckpt_every");
    o.train.hyper.lr = c.real("ae.lr");
    o.train.final_lr_ratio = c.real("train.final_lr_ratio");
    o.train.seed = c.seed("ae.seed");
    return o;
}

sem::SemConfig sem_config(const Config &c) {
    sem::SemConfig s;
    s.patch = c.size("sem.patch");
    s.d = c.size("sem.d");
    s.blocks = c.size("sem.blocks");
    s.heads = c.size("sem.heads");
    s.height = c.size("corpus.height");
    s.width = c.size("corpus.width");
    s.fps = c.real("corpus.fps");
    s.semantic_fps = c.real("corpus.semantic_fps");
    s.chunk_frames = static_cast<std::size_t>(
        static_cast<double>(c.size("corpus.frames")) / static_cast<double>(synth::subsample_stride(s.fps, s.semantic_fps)));
    s.vocab.min_speed = c.real("corpus.min_speed");
    s.vocab.max_speed = c.real("corpus.max_speed");
    s.validate();
    return s;
}

sem::PretrainOptions sem_options(const Config &c, std::uint64_t seed) {
    sem::PretrainOptions o;
    o.batch = c.size("sem.batch");
    o.train.stage = "sem_pretrain";
    o.train.steps = c.size("sem.steps");
    o.train.ckpt_every = c.size("train.ckpt_every");
    o.train.hyper.lr = c.real("sem.lr");
    o.train.hyper.clip_norm = c.real("train.clip_norm");
    o.train.final_lr_ratio = c.real("train.final_lr_ratio");
    o.train.seed = seed;
    return o;
}

Source stage_source(Stage s) {
    switch (s) {
        case Stage::kLatentGen:
        case Stage::kSemGen: return Source::kEncoder;
        case Stage::kBaselineVae2Stage: return Source::kVaeLatent;
        case Stage::kBaselineCt:
        case Stage::kBaselineCtSwin: return Source::kNone;
    }
    throw InternalError("bad stage");
}

bool two_stage(Stage s) { return stage_source(s) != Source::kNone; }

namespace {

const std::vector<std::string> kCorpusKeys = {"corpus.num_clips",     "corpus.frames",      "corpus.height",
                                              "corpus.width",         "corpus.fps",         "corpus.semantic_fps",
                                              "corpus.texture_amplitude", "corpus.sprite_scale", "corpus.min_speed",
                                              "corpus.max_speed",     "corpus.seed"};
const std::vector<std::string> kAeKeys = {"ae.f_t",   "ae.f_s",  "ae.c_z",  "ae.hidden", "ae.blocks",
                                          "ae.beta",  "ae.steps", "ae.batch", "ae.lr",    "ae.seed"};
const std::vector<std::string> kSemKeys = {"corpus.height",    "corpus.width",       "corpus.fps",
                                           "corpus.semantic_fps", "corpus.texture_amplitude", "corpus.sprite_scale",
                                           "corpus.min_speed", "corpus.max_speed",   "corpus.frames",
                                           "sem.patch",        "sem.d",              "sem.blocks",
                                           "sem.heads",        "sem.steps",          "sem.batch",
                                           "sem.lr",           "sem.pretrain_clips", "sem.pretrain_seed"};

json pick(const Config &c, const std::vector<std::string> &keys, const json &extra = json::object()) {
    json j = extra;
    for (const auto &k : keys) j[k] = c.raw(k);
    return j;
}

// Writes the key set next to a new artifact, or checks it against an existing one.
void check_or_record(const fs::path &dir, const json &keys, const std::string &what) {
    const fs::path f = dir / "config.json";
    if (fs::exists(f)) {
        const json stored = json::parse(io::read_text(f));
        if (stored != keys) {
            throw ConfigError(what + " in " + dir.string() +
                              " was built with different config keys; use a fresh artifact root");
        }
        return;
    }
    pipeline::write_config_snapshot(dir, keys);
}

template <typename P, typename Train>
std::unique_ptr<P> load_or_train(const fs::path &dir, const std::string &file, const json &keys, bool train,
                                 const std::string &what, const std::string &verb, Train &&trainer) {
    const fs::path path = dir / file;
    if (fs::exists(path)) {
        check_or_record(dir, keys, what);
        return std::make_unique<P>(P::load(path));
    }
    if (!train) throw DependencyError(what + " not found at " + path.string() + " (run `semgen " + verb + "` first)");
    check_or_record(dir, keys, what);
    auto p = std::make_unique<P>(trainer(dir));
    p->save(path);
    return p;
}

}  // namespace

Workspace::Workspace(Config cfg, fs::path root) : cfg_(std::move(cfg)), root_(std::move(root)) {}

const std::vector<synth::Clip> &Workspace::corpus(bool long_mode) {
    auto &slot = long_mode ? long_ : short_;
    if (!slot) slot = synth::make_corpus(corpus_config(cfg_), long_mode);
    return *slot;
}

const ae::AeParams &Workspace::autoencoder(bool train) {
    if (!ae_) {
        ae_ = load_or_train<ae::AeParams>(
            root_ / "ae", "ae.bin", pick(cfg_, kCorpusKeys, pick(cfg_, kAeKeys)), train, "autoencoder", "train-ae",
            [&](const fs::path &dir) {
                auto o = ae_options(cfg_);
                o.train.run_dir = dir;
                return ae::train_autoencoder(corpus(), ae_config(cfg_), o);
            });
    }
    return *ae_;
}

const sem::SemanticEncoderParams &Workspace::encoder(bool train) {
    if (!encoder_) {
        encoder_ = load_or_train<sem::SemanticEncoderParams>(
            root_ / "encoder", "encoder.bin", pick(cfg_, kSemKeys, {{"seed", cfg_.raw("sem.seed")}}), train,
            "semantic encoder", "pretrain-sem", [&](const fs::path &dir) {
                auto o = sem_options(cfg_, cfg_.seed("sem.seed"));
                o.train.run_dir = dir;
                return sem::pretrain_semantic_encoder(synth::make_corpus(pretrain_corpus_config(cfg_)), sem_config(cfg_), o);
            });
    }
    return *encoder_;
}

const sem::SemanticEncoderParams &Workspace::probe(bool train) {
    if (!probe_) {
        probe_ = load_or_train<sem::SemanticEncoderParams>(
            root_ / "probe", "probe.bin", pick(cfg_, kSemKeys, {{"seed", cfg_.raw("sem.probe_seed")}}), train,
            "factor probe", "pretrain-sem", [&](const fs::path &dir) {
                auto o = sem_options(cfg_, cfg_.seed("sem.probe_seed"));
                o.train.run_dir = dir;
                return sem::pretrain_semantic_encoder(synth::make_corpus(pretrain_corpus_config(cfg_)), sem_config(cfg_), o);
            });
    }
    return *probe_;
}

pipeline::FrozenModules Workspace::frozen(Source source, bool train) {
    pipeline::FrozenModules f;
    f.ae = &autoencoder(train);
    f.sem_cfg = sem_config(cfg_);
    if (source == Source::kEncoder) f.encoder = &encoder(train);
    return f;
}

const std::vector<pipeline::Prepared> &Workspace::prepared(Source source, bool long_mode, bool train) {
    const std::string key = pipeline::source_name(source) + (long_mode ? "/long" : "/short");
    for (const auto &[k, v] : prepared_)
        if (k == key) return v;
    const auto fm = frozen(source, train);
    prepared_.emplace_back(key, pipeline::prepare(corpus(long_mode), fm, source));
    return prepared_.back().second;
}

pipeline::StageConfig Workspace::stage_config(Stage stage, bool long_mode, const json &overrides) const {
    Config c = cfg_;
    c.merge(overrides);
    pipeline::StageConfig s = pipeline::stage_config(c, stage);
    if (long_mode) {
        s.batch = c.size("train.long_batch");
        if (stage != Stage::kSemGen && stage != Stage::kBaselineCt) s.layout.mode = dit::LayoutMode::kSwinInterleaved;
        s.validate();
    }
    return s;
}

// ------------------------------------------------------------------- runs

namespace {

json run_identity(const pipeline::StageConfig &s) {
    json j = s.budget();
    j["stage"] = pipeline::stage_name(s.stage);
    j["layout"] = dit::layout_name(s.layout.mode);
    j["window"] = s.layout.window;
    j["d_c"] = s.d_c;
    return j;
}

void check_same_run(const pipeline::StageConfig &stored, const pipeline::StageConfig &wanted, const std::string &name) {
    if (run_identity(stored) != run_identity(wanted)) {
        throw ConfigError("run '" + name + "' already holds a " + pipeline::stage_name(stored.stage) +
                          " model trained under different settings (" + run_identity(stored).dump() + ")");
    }
}

json fingerprint_json(const pipeline::RunFingerprint &f) {
    return {{"name", f.name},
            {"corpus_hash", hex64(f.corpus_hash)},
            {"budget_hash", hex64(f.budget_hash)},
            {"data_order_hash", hex64(f.data_order_hash)}};
}

std::uint64_t parse_hex(const std::string &s) { return std::stoull(s, nullptr, 16); }

}  // namespace

pipeline::LatentGenerator train_stage_one(Workspace &ws, const RunSpec &spec, TrainResult *result) {
    const fs::path dir = ws.run_dir(spec.name);
    const fs::path done = dir / "latent.bin";
    Stage stage = spec.stage == Stage::kSemGen ? Stage::kLatentGen : spec.stage;
    const pipeline::StageConfig sc = ws.stage_config(stage, spec.long_mode, spec.overrides);
    if (fs::exists(done)) {
        auto g = pipeline::LatentGenerator::load(done);
        check_same_run(g.cfg, sc, spec.name);
        if (result) {
            *result = TrainResult{};
            result->data_order_hash = load_fingerprint(ws, spec.name).data_order_hash;
        }
        return g;
    }
    Config run_cfg = ws.config();
    run_cfg.merge(spec.overrides);
    json snap = run_cfg.snapshot();
    snap["run"] = {{"stage", pipeline::stage_name(spec.stage)}, {"long_mode", spec.long_mode}};
    pipeline::write_config_snapshot(dir, snap);

    const Source source = stage_source(stage);
    const auto &data = ws.prepared(source, spec.long_mode);
    const auto frozen = ws.frozen(source);
    TrainResult r;
    pipeline::StageRun run;
    run.run_dir = dir / "latent";
    run.result = &r;
    auto g = pipeline::train_latent_generator(data, sc, source, frozen, run);
    g.save(done);
    pipeline::RunFingerprint f{spec.name, synth::corpus_hash(ws.corpus(spec.long_mode)), pipeline::budget_hash(sc),
                               r.data_order_hash};
    io::write_text(dir / "fingerprint.json", fingerprint_json(f).dump(2) + "\n");
    if (result) *result = r;
    return g;
}

pipeline::SemanticGenerator train_stage_two(Workspace &ws, const RunSpec &spec, TrainResult *result) {
    const fs::path dir = ws.run_dir(spec.name);
    if (!two_stage(spec.stage)) throw ConfigError(pipeline::stage_name(spec.stage) + " has no semantic stage");
    const fs::path done = dir / "semantic.bin";
    const pipeline::StageConfig sc = ws.stage_config(Stage::kSemGen, spec.long_mode, spec.overrides);
    if (fs::exists(done)) {
        auto g = pipeline::SemanticGenerator::load(done);
        check_same_run(g.cfg, sc, spec.name);
        if (result) *result = TrainResult{};
        return g;
    }
    if (!fs::exists(dir / "latent.bin")) {
        throw DependencyError("run '" + spec.name + "' has no finished latent generator (" +
                              (dir / "latent.bin").string() + ")");
    }
    const auto latent = pipeline::LatentGenerator::load(dir / "latent.bin");
    const auto &data = ws.prepared(latent.source, spec.long_mode);
    TrainResult r;
    pipeline::StageRun run;
    run.run_dir = dir / "semantic";
    run.result = &r;
    auto g = pipeline::train_semantic_generator(data, sc, latent, run);
    g.save(done);
    if (result) *result = r;
    return g;
}

TrainedRun train_run(Workspace &ws, const RunSpec &spec) {
    TrainedRun out;
    TrainResult r1, r2;
    out.latent = train_stage_one(ws, spec, &r1);
    out.latent_losses = r1.losses;
    if (two_stage(spec.stage)) {
        out.semantic = train_stage_two(ws, spec, &r2);
        out.semantic_losses = r2.losses;
    }
    out.fingerprint = load_fingerprint(ws, spec.name);
    return out;
}

TrainedRun load_run(const Workspace &ws, const std::string &name) {
    const fs::path dir = ws.run_dir(name);
    if (!fs::exists(dir / "latent.bin")) {
        throw DependencyError("run '" + name + "' has no trained latent generator at " + (dir / "latent.bin").string());
    }
    TrainedRun out;
    out.latent = pipeline::LatentGenerator::load(dir / "latent.bin");
    if (out.latent.has_semantics()) {
        if (!fs::exists(dir / "semantic.bin")) {
            throw DependencyError("run '" + name + "' has no trained semantic generator at " +
                                  (dir / "semantic.bin").string());
        }
        out.semantic = pipeline::SemanticGenerator::load(dir / "semantic.bin");
    }
    out.fingerprint = load_fingerprint(ws, name);
    return out;
}

pipeline::RunFingerprint load_fingerprint(const Workspace &ws, const std::string &name) {
    const fs::path f = ws.run_dir(name) / "fingerprint.json";
    if (!fs::exists(f)) throw DependencyError("run '" + name + "' has no fingerprint.json");
    const json j = json::parse(io::read_text(f));
    return {j.at("name"), parse_hex(j.at("corpus_hash")), parse_hex(j.at("budget_hash")),
            parse_hex(j.at("data_order_hash"))};
}

pipeline::SemanticGenerator semantic_at_step(const Workspace &ws, const TrainedRun &run, const std::string &name,
                                             std::size_t step) {
    if (!run.semantic) throw ConfigError("run '" + name + "' has no semantic generator");
    return pipeline::semantic_generator_at(*run.semantic,
                                           ws.run_dir(name) / "semantic" / ("ckpt_" + std::to_string(step) + ".bin"));
}

pipeline::GenerateOptions generate_options(const Config &c, bool long_mode, std::uint64_t seed) {
    pipeline::GenerateOptions o;
    o.sampler_steps = c.size("sampler.steps");
    o.noise_level = c.real("sem.noise_level");
    o.seed = seed;
    o.frames = long_mode ? c.size("corpus.frames_long") : c.size("corpus.frames");
    o.height = c.size("corpus.height");
    o.width = c.size("corpus.width");
    o.fps = c.real("corpus.fps");
    return o;
}

synth::Video sample(const TrainedRun &run, const pipeline::SemanticGenerator *semantic, const ae::AeParams &ae,
                    const synth::FactorSpec *cond, const pipeline::GenerateOptions &opts, bool long_mode) {
    if (!semantic && run.semantic) semantic = &*run.semantic;
    return long_mode ? pipeline::generate_long(cond, semantic, run.latent, ae, opts)
                     : pipeline::generate(cond, semantic, run.latent, ae, opts);
}

}  // namespace semgen::workflow
