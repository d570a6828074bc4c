#include "semgen/pipeline.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "semgen/checkpoint.hpp"
#include "semgen/errors.hpp"
#include "semgen/io.hpp"

namespace semgen::pipeline {

using nlohmann::json;

Stage parse_stage(const std::string &s) {
    if (s == "latent_gen") return Stage::kLatentGen;
    if (s == "sem_gen") return Stage::kSemGen;
    if (s == "baseline_ct") return Stage::kBaselineCt;
    if (s == "baseline_ct_swin") return Stage::kBaselineCtSwin;
    if (s == "baseline_vae2stage") return Stage::kBaselineVae2Stage;
    throw ConfigError("unknown stage '" + s + "'");
}

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::kLatentGen: return "latent_gen";
        case Stage::kSemGen: return "sem_gen";
        case Stage::kBaselineCt: return "baseline_ct";
        case Stage::kBaselineCtSwin: return "baseline_ct_swin";
        case Stage::kBaselineVae2Stage: return "baseline_vae2stage";
    }
    throw InternalError("bad stage");
}

std::string source_name(Source s) {
    switch (s) {
        case Source::kNone: return "none";
        case Source::kEncoder: return "encoder";
        case Source::kVaeLatent: return "vae_latent";
    }
    throw InternalError("bad source");
}

namespace {

Source parse_source(const std::string &s) {
    if (s == "none") return Source::kNone;
    if (s == "encoder") return Source::kEncoder;
    if (s == "vae_latent") return Source::kVaeLatent;
    throw ConfigError("unknown conditioning source '" + s + "'");
}

}  // namespace

// ------------------------------------------------------------ stage config

void StageConfig::validate() const {
    const std::string who = stage_name(stage) + ": ";
    if (steps == 0) throw ConfigError(who + "steps must be >= 1");
    if (batch == 0) throw ConfigError(who + "batch must be >= 1");
    if (!(lr > 0.0)) throw ConfigError(who + "learning rate must be positive");
    if (d_c == 0) throw ConfigError(who + "d_c must be >= 1");
    if (kl_weight < 0.0) throw ConfigError(who + "kl_weight must be >= 0");
    if (noise_level < 0.0 || noise_level > 1.0) throw ConfigError(who + "noise_level must lie in [0, 1]");
    if (cond_dropout < 0.0 || cond_dropout > 1.0) throw ConfigError(who + "cond_dropout must lie in [0, 1]");
    if (final_lr_ratio <= 0.0 || final_lr_ratio > 1.0) throw ConfigError(who + "final_lr_ratio must lie in (0, 1]");
    layout.validate();
    if (stage == Stage::kBaselineCt && layout.mode != dit::LayoutMode::kFull) {
        throw ConfigError(who + "Base-CT uses full attention");
    }
    if (stage == Stage::kBaselineCtSwin && layout.mode != dit::LayoutMode::kSwinInterleaved) {
        throw ConfigError(who + "Base-CT-Swin uses the swin_interleaved layout");
    }
    if (model.c_model == 0 || model.blocks == 0 || model.heads == 0 || model.c_model % model.heads != 0) {
        throw ConfigError(who + "c_model must be a positive multiple of heads");
    }
}

json StageConfig::budget() const {
    return {{"steps", steps},         {"batch", batch},       {"lr", lr},
            {"clip_norm", clip_norm}, {"adam_eps", adam_eps}, {"final_lr_ratio", final_lr_ratio},
            {"seed", seed}};
}

json StageConfig::to_json() const {
    json j = budget();
    j["stage"] = stage_name(stage);
    j["ckpt_every"] = ckpt_every;
    j["layout"] = dit::layout_name(layout.mode);
    j["window"] = layout.window;
    j["d_c"] = d_c;
    j["kl_weight"] = kl_weight;
    j["noise_level"] = noise_level;
    j["cond_dropout"] = cond_dropout;
    j["model"] = model.to_json();
    return j;
}

StageConfig StageConfig::from_json(const json &j) {
    StageConfig c;
    c.stage = parse_stage(j.at("stage"));
    c.steps = j.at("steps");
    c.batch = j.at("batch");
    c.lr = j.at("lr");
    c.clip_norm = j.at("clip_norm");
    c.adam_eps = j.at("adam_eps");
    c.final_lr_ratio = j.at("final_lr_ratio");
    c.seed = j.at("seed");
    c.ckpt_every = j.at("ckpt_every");
    c.layout.mode = dit::parse_layout(j.at("layout"));
    c.layout.window = j.at("window");
    c.d_c = j.at("d_c");
    c.kl_weight = j.at("kl_weight");
    c.noise_level = j.at("noise_level");
    c.cond_dropout = j.at("cond_dropout");
    c.model = dit::DitConfig::from_json(j.at("model"));
    return c;
}

StageConfig stage_config(const Config &c, Stage stage) {
    StageConfig s;
    s.stage = stage;
    s.steps = c.size("train.steps");
    s.batch = c.size("train.batch");
    s.lr = c.real("train.lr");
    s.clip_norm = c.real("train.clip_norm");
    s.adam_eps = c.real("train.adam_eps");
    s.final_lr_ratio = c.real("train.final_lr_ratio");
    s.ckpt_every = c.size("train.ckpt_every");
    s.seed = c.seed("train.seed");
    s.layout.mode = dit::parse_layout(c.str("dit.layout"));
    s.layout.window = c.size("dit.window");
    if (stage == Stage::kBaselineCtSwin) s.layout.mode = dit::LayoutMode::kSwinInterleaved;
    // The semantic generator and Base-CT always attend fully.
    if (stage == Stage::kSemGen || stage == Stage::kBaselineCt) s.layout.mode = dit::LayoutMode::kFull;
    s.d_c = c.size("sem.d_c");
    s.kl_weight = c.real("sem.kl_weight");
    s.noise_level = c.real("sem.noise_level");
    s.cond_dropout = c.real("dit.cond_dropout");
    s.model.c_model = c.size("dit.c_model");
    s.model.blocks = c.size("dit.blocks");
    s.model.heads = c.size("dit.heads");
    s.model.mlp_ratio = c.size("dit.mlp_ratio");
    s.model.temb_dim = c.size("dit.temb_dim");
    s.model.norm_eps = c.real("dit.norm_eps");
    s.model.frame_w = static_cast<double>(c.size("corpus.width"));
    s.model.frame_h = static_cast<double>(c.size("corpus.height"));
    s.model.vocab.min_speed = c.real("corpus.min_speed");
    s.model.vocab.max_speed = c.real("corpus.max_speed");
    s.validate();
    return s;
}

std::uint64_t budget_hash(const StageConfig &c) {
    Fnv1a h;
    h.update(c.budget().dump());
    return h.digest();
}

// ---------------------------------------------------------------- geometry

GridDims latent_dims(std::size_t frames, std::size_t height, std::size_t width, const ae::AeConfig &cfg) {
    cfg.check_video(frames, height, width);
    return {frames / cfg.f_t, height / cfg.f_s, width / cfg.f_s};
}

GridDims semantic_dims(std::size_t frames, std::size_t height, std::size_t width, const sem::SemConfig &cfg) {
    const std::size_t stride = synth::subsample_stride(cfg.fps, cfg.semantic_fps);
    const std::size_t fs = (frames + stride - 1) / stride;
    if (fs % cfg.chunk_frames != 0 || height % cfg.patch != 0 || width % cfg.patch != 0) {
        throw ConfigError("video " + std::to_string(frames) + "x" + std::to_string(height) + "x" +
                          std::to_string(width) + " does not tile into semantic chunks of " +
                          std::to_string(cfg.chunk_frames) + " frames and " + std::to_string(cfg.patch) + " px");
    }
    return {fs / 2, height / cfg.patch, width / cfg.patch};
}

TokenGrid space_to_depth(const TokenGrid &g, const GridDims &coarse) {
    if (coarse.tokens() == 0 || g.t % coarse.t != 0 || g.h % coarse.h != 0 || g.w % coarse.w != 0) {
        throw DimensionError("space_to_depth: grid " + g.dims_str() + " does not tile into " +
                             std::to_string(coarse.t) + "x" + std::to_string(coarse.h) + "x" + std::to_string(coarse.w));
    }
    const std::size_t rt = g.t / coarse.t, rh = g.h / coarse.h, rw = g.w / coarse.w;
    TokenGrid out(coarse.t, coarse.h, coarse.w, g.channels * rt * rh * rw);
    for (std::size_t t = 0; t < coarse.t; ++t)
        for (std::size_t h = 0; h < coarse.h; ++h)
            for (std::size_t w = 0; w < coarse.w; ++w) {
                const std::size_t dst = out.index(t, h, w);
                std::size_t c_out = 0;
                for (std::size_t dt = 0; dt < rt; ++dt)
                    for (std::size_t dh = 0; dh < rh; ++dh)
                        for (std::size_t dw = 0; dw < rw; ++dw) {
                            const std::size_t src = g.index(t * rt + dt, h * rh + dh, w * rw + dw);
                            for (std::size_t c = 0; c < g.channels; ++c) out.at(dst, c_out++) = g.at(src, c);
                        }
            }
    return out;
}

// ---------------------------------------------------------------- prepare

namespace {

TokenGrid raw_representation(const synth::Video &v, const TokenGrid &latent, const FrozenModules &frozen,
                             Source source) {
    switch (source) {
        case Source::kNone: return {};
        case Source::kEncoder:
            if (!frozen.encoder) throw DependencyError("semantic encoder required for encoder conditioning");
            return sem::sem_encode(v, *frozen.encoder);
        case Source::kVaeLatent:
            return space_to_depth(latent, semantic_dims(v.frames, v.height, v.width, frozen.geometry()));
    }
    throw InternalError("bad source");
}

TokenGrid mean_latent(const synth::Video &v, const ae::AeParams &ae) {
    Rng unused(0);
    return ae::standardize(ae::ae_encode(v, ae, unused, false), ae);
}

void require_frozen(const FrozenModules &frozen, Source source) {
    if (!frozen.ae) throw DependencyError("a trained autoencoder is required");
    if (!frozen.ae->frozen) throw ConfigError("the autoencoder must be frozen before generator training");
    if (source == Source::kEncoder && !frozen.encoder) throw DependencyError("a pretrained semantic encoder is required");
}

}  // namespace

std::vector<Prepared> prepare(const std::vector<synth::Clip> &clips, const FrozenModules &frozen, Source source) {
    require_frozen(frozen, source);
    std::vector<Prepared> out;
    out.reserve(clips.size());
    for (const auto &c : clips) {
        Prepared p;
        p.factors = c.factors;
        p.latent = mean_latent(c.video, *frozen.ae);
        p.raw = raw_representation(c.video, p.latent, frozen, source);
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------- persistence

void LatentGenerator::save(const std::filesystem::path &path) const {
    Checkpoint ck;
    ck.meta = {{"module", "latent_generator"},
               {"stage", cfg.to_json()},
               {"source", source_name(source)},
               {"dit", dit.cfg.to_json()},
               {"sem_mean", sem_mean},
               {"sem_std", sem_std},
               {"ae_hash", hex64(ae_hash)},
               {"encoder_hash", hex64(encoder_hash)}};
    ck.add_params(dit.params(), "dit.");
    if (has_semantics()) {
        ck.meta["compressor"] = {{"d", compressor.d},
                                 {"d_c", compressor.d_c},
                                 {"logvar_min", compressor.logvar_min},
                                 {"logvar_max", compressor.logvar_max},
                                 {"frozen", compressor.frozen}};
        ck.add_params(compressor.params(), "comp.");
    }
    save_checkpoint(path, ck);
}

LatentGenerator LatentGenerator::load(const std::filesystem::path &path) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("module", "") != "latent_generator") {
        throw ConfigError(path.string() + " is not a latent generator checkpoint");
    }
    LatentGenerator g;
    g.cfg = StageConfig::from_json(ck.meta.at("stage"));
    g.source = parse_source(ck.meta.at("source"));
    Rng rng(0);
    g.dit = dit::DitParams(dit::DitConfig::from_json(ck.meta.at("dit")), rng);
    auto dp = g.dit.params();
    ck.load_params(dp, "dit.");
    g.sem_mean = ck.meta.at("sem_mean").get<std::vector<double>>();
    g.sem_std = ck.meta.at("sem_std").get<std::vector<double>>();
    g.ae_hash = std::stoull(ck.meta.at("ae_hash").get<std::string>(), nullptr, 16);
    g.encoder_hash = std::stoull(ck.meta.at("encoder_hash").get<std::string>(), nullptr, 16);
    if (g.has_semantics()) {
        const auto &c = ck.meta.at("compressor");
        g.compressor = sem::CompressorParams(c.at("d"), c.at("d_c"), rng);
        g.compressor.logvar_min = c.at("logvar_min");
        g.compressor.logvar_max = c.at("logvar_max");
        g.compressor.frozen = c.at("frozen");
        auto cp = g.compressor.params();
        ck.load_params(cp, "comp.");
        set_trainable(cp, false);
    }
    set_trainable(dp, false);
    return g;
}

void SemanticGenerator::save(const std::filesystem::path &path) const {
    Checkpoint ck;
    ck.meta = {{"module", "semantic_generator"},
               {"stage", cfg.to_json()},
               {"dit", dit.cfg.to_json()},
               {"compressor_hash", hex64(compressor_hash)}};
    ck.add_params(dit.params(), "dit.");
    save_checkpoint(path, ck);
}

SemanticGenerator SemanticGenerator::load(const std::filesystem::path &path) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("module", "") != "semantic_generator") {
        throw ConfigError(path.string() + " is not a semantic generator checkpoint");
    }
    SemanticGenerator g;
    g.cfg = StageConfig::from_json(ck.meta.at("stage"));
    Rng rng(0);
    g.dit = dit::DitParams(dit::DitConfig::from_json(ck.meta.at("dit")), rng);
    auto dp = g.dit.params();
    ck.load_params(dp, "dit.");
    set_trainable(dp, false);
    g.compressor_hash = std::stoull(ck.meta.at("compressor_hash").get<std::string>(), nullptr, 16);
    return g;
}

// ---------------------------------------------------------------- training

namespace {

void check_uniform(const std::vector<Prepared> &data, bool need_raw) {
    if (data.empty()) throw ConfigError("generator training needs a non-empty corpus");
    for (const auto &d : data) {
        if (!d.latent.same_dims(data[0].latent)) throw DimensionError("latent grids differ in size within the corpus");
        if (need_raw && (d.raw.tokens() == 0 || !d.raw.same_dims(data[0].raw))) {
            throw DimensionError("conditioning grids are missing or differ in size within the corpus");
        }
    }
}

TrainOptions train_options(const StageConfig &cfg, const StageRun &run) {
    TrainOptions o;
    o.stage = stage_name(cfg.stage);
    o.steps = cfg.steps;
    o.ckpt_every = cfg.ckpt_every;
    o.hyper.lr = cfg.lr;
    o.hyper.eps = cfg.adam_eps;
    o.hyper.clip_norm = cfg.clip_norm;
    o.final_lr_ratio = cfg.final_lr_ratio;
    o.seed = cfg.seed;
    o.run_dir = run.run_dir;
    o.on_checkpoint = run.on_checkpoint;
    return o;
}

// Per-example streams derived from the example key; the trainer's own stream
// only ever draws (index, key) pairs, so matched runs see the same data order.
bool drop_condition(std::uint64_t key, double p) { return Rng(key).split(1).uniform() < p; }
Rng compressor_stream(std::uint64_t key) { return Rng(key).split(2); }

struct Draw {
    std::size_t index;
    std::uint64_t key;
};

std::vector<Draw> draw_batch(std::size_t batch, std::size_t n, Rng &rng, Fnv1a &order) {
    std::vector<Draw> out;
    for (std::size_t b = 0; b < batch; ++b) {
        Draw d{static_cast<std::size_t>(rng.below(n)), rng.next_u64()};
        order.update(&d.index, sizeof d.index);
        order.update(&d.key, sizeof d.key);
        out.push_back(d);
    }
    return out;
}

void channel_stats(const std::vector<TokenGrid> &grids, std::vector<double> &mean, std::vector<double> &sd) {
    const std::size_t c = grids.at(0).channels;
    mean.assign(c, 0.0);
    sd.assign(c, 0.0);
    double n = 0.0;
    for (const auto &g : grids)
        for (std::size_t i = 0; i < g.tokens(); ++i) {
            for (std::size_t k = 0; k < c; ++k) mean[k] += g.at(i, k);
            n += 1.0;
        }
    for (auto &m : mean) m /= n;
    for (const auto &g : grids)
        for (std::size_t i = 0; i < g.tokens(); ++i)
            for (std::size_t k = 0; k < c; ++k) sd[k] += (g.at(i, k) - mean[k]) * (g.at(i, k) - mean[k]);
    for (auto &s : sd) s = std::max(std::sqrt(s / n), 1e-6);
}

TokenGrid compressed_mean(const TokenGrid &raw, const sem::CompressorParams &comp) {
    Rng unused(0);
    return sem::compress(raw, comp, unused, false).grid;
}

}  // namespace

LatentGenerator train_latent_generator(const std::vector<Prepared> &data, const StageConfig &cfg, Source source,
                                       const FrozenModules &frozen, const StageRun &run) {
    cfg.validate();
    require_frozen(frozen, source);
    const bool with_sem = source != Source::kNone;
    if (with_sem && (cfg.stage == Stage::kBaselineCt || cfg.stage == Stage::kBaselineCtSwin)) {
        throw InternalError("layout guard: " + stage_name(cfg.stage) + " takes no semantic tokens");
    }
    if (!with_sem && !(cfg.stage == Stage::kBaselineCt || cfg.stage == Stage::kBaselineCtSwin)) {
        throw ConfigError(stage_name(cfg.stage) + " needs a conditioning source");
    }
    check_uniform(data, with_sem);
    const std::uint64_t ae_before = frozen.ae->hash();
    const std::uint64_t enc_before = frozen.encoder ? frozen.encoder->hash() : 0;

    const TokenGrid &lat0 = data[0].latent;
    LatentGenerator g;
    g.cfg = cfg;
    g.source = source;
    g.ae_hash = ae_before;
    g.encoder_hash = enc_before;
    dit::DitConfig m = cfg.model;
    m.c_target = lat0.channels;
    m.max_t = lat0.t;
    m.grid_h = lat0.h;
    m.grid_w = lat0.w;
    m.c_sem = with_sem ? cfg.d_c : 0;
    if (with_sem) {
        m.sem_max_t = data[0].raw.t;
        m.sem_h = data[0].raw.h;
        m.sem_w = data[0].raw.w;
    }
    g.cfg.model = m;
    Rng init(cfg.seed);
    g.dit = dit::DitParams(m, init);
    if (with_sem) g.compressor = sem::CompressorParams(data[0].raw.channels, cfg.d_c, init);

    const dit::TokenSequence seq = dit::build_sequence(lat0.t, lat0.h, lat0.w, with_sem ? &data[0].raw : nullptr);
    const auto masks = dit::build_masks(seq, cfg.layout, m.blocks);

    std::vector<Tensor> latents, raws;
    for (const auto &d : data) {
        latents.push_back(d.latent.tensor());
        if (with_sem) raws.push_back(d.raw.tensor());
    }

    ParamList params = g.dit.params();
    if (with_sem) {
        const auto cp = g.compressor.params();
        params.insert(params.end(), cp.begin(), cp.end());
    }
    set_trainable(params, true);

    const auto step = [&](std::size_t, Rng &rng, Fnv1a &order) {
        const auto draws = draw_batch(cfg.batch, data.size(), rng, order);
        std::vector<flow::FlowExample> batch;
        std::vector<Tensor> conds, sems;
        Tensor kl;
        for (const auto &d : draws) {
            batch.push_back({latents[d.index], d.key});
            const bool drop = drop_condition(d.key, cfg.cond_dropout);
            conds.push_back(dit::condition_tokens(drop ? nullptr : &data[d.index].factors, g.dit));
            if (with_sem) {
                Rng r = compressor_stream(d.key);
                const auto c = sem::compress_tensor(raws[d.index], g.compressor, &r);
                sems.push_back(c.z);
                const Tensor k = sem::kl_diag_gaussian(c.mean, c.logvar);
                kl = kl.defined() ? add(kl, k) : k;
            }
        }
        const auto model = [&](const Tensor &z_t, double t, std::size_t i) {
            return dit::dit_forward(seq, z_t, with_sem ? sems[i] : Tensor(), conds[i], t, g.dit, masks);
        };
        Tensor loss = flow::cfm_loss(model, batch);
        if (with_sem && cfg.kl_weight > 0.0) {
            loss = add(loss, scale(kl, cfg.kl_weight / static_cast<double>(draws.size())));
        }
        loss.backward();
        return loss.item();
    };
    json meta = {{"source", source_name(source)}, {"budget", cfg.budget()}};
    TrainResult res = run_training(params, train_options(cfg, run), step, meta);
    if (run.result) *run.result = res;
    set_trainable(params, false);

    if (frozen.ae->hash() != ae_before || (frozen.encoder && frozen.encoder->hash() != enc_before)) {
        throw ConfigError("a frozen module changed during " + stage_name(cfg.stage) + " training");
    }
    if (with_sem) {
        g.compressor.frozen = true;
        std::vector<TokenGrid> means;
        for (const auto &d : data) means.push_back(compressed_mean(d.raw, g.compressor));
        channel_stats(means, g.sem_mean, g.sem_std);
    }
    return g;
}

TokenGrid semantic_target(const TokenGrid &raw, const LatentGenerator &latent) {
    if (!latent.has_semantics()) throw ConfigError("semantic targets need a latent generator with semantics");
    TokenGrid z = compressed_mean(raw, latent.compressor);
    for (std::size_t i = 0; i < z.tokens(); ++i)
        for (std::size_t c = 0; c < z.channels; ++c) z.at(i, c) = (z.at(i, c) - latent.sem_mean[c]) / latent.sem_std[c];
    return z;
}

SemanticGenerator train_semantic_generator(const std::vector<Prepared> &data, const StageConfig &cfg,
                                           const LatentGenerator &latent, const StageRun &run) {
    cfg.validate();
    if (!latent.has_semantics()) throw ConfigError("the semantic generator needs a stage-one model with a compressor");
    if (!latent.compressor.frozen) throw ConfigError("the compressor must be frozen before semantic generator training");
    check_uniform(data, true);
    const std::uint64_t comp_before = latent.compressor.hash();

    std::vector<Tensor> targets;
    for (const auto &d : data) targets.push_back(semantic_target(d.raw, latent).tensor());
    const TokenGrid &r0 = data[0].raw;

    SemanticGenerator g;
    g.cfg = cfg;
    g.cfg.layout.mode = dit::LayoutMode::kFull;
    g.compressor_hash = comp_before;
    dit::DitConfig m = cfg.model;
    m.c_target = latent.compressor.d_c;
    m.c_sem = 0;
    m.max_t = r0.t;
    m.grid_h = r0.h;
    m.grid_w = r0.w;
    g.cfg.model = m;
    Rng init(cfg.seed);
    g.dit = dit::DitParams(m, init);

    const dit::TokenSequence seq = dit::build_sequence(r0.t, r0.h, r0.w, nullptr);
    const auto masks = dit::build_masks(seq, g.cfg.layout, m.blocks);
    ParamList params = g.dit.params();
    set_trainable(params, true);
    const auto step = [&](std::size_t, Rng &rng, Fnv1a &order) {
        const auto draws = draw_batch(cfg.batch, data.size(), rng, order);
        std::vector<flow::FlowExample> batch;
        std::vector<Tensor> conds;
        for (const auto &d : draws) {
            batch.push_back({targets[d.index], d.key});
            const bool drop = drop_condition(d.key, cfg.cond_dropout);
            conds.push_back(dit::condition_tokens(drop ? nullptr : &data[d.index].factors, g.dit));
        }
        const auto model = [&](const Tensor &z_t, double t, std::size_t i) {
            return dit::dit_forward(seq, z_t, Tensor(), conds[i], t, g.dit, masks);
        };
        const Tensor loss = flow::cfm_loss(model, batch);
        loss.backward();
        return loss.item();
    };
    json meta = {{"compressor_hash", hex64(comp_before)}, {"budget", cfg.budget()}};
    TrainResult res = run_training(params, train_options(g.cfg, run), step, meta);
    if (run.result) *run.result = res;
    set_trainable(params, false);
    if (latent.compressor.hash() != comp_before) {
        throw ConfigError("the frozen compressor changed during semantic generator training");
    }
    return g;
}

SemanticGenerator semantic_generator_at(const SemanticGenerator &trained, const std::filesystem::path &ckpt) {
    const Checkpoint ck = load_checkpoint(ckpt);
    if (ck.meta.value("stage", "") != stage_name(Stage::kSemGen)) {
        throw ConfigError(ckpt.string() + " is not a semantic generator training checkpoint");
    }
    SemanticGenerator g = trained;
    Rng rng(0);
    g.dit = dit::DitParams(trained.dit.cfg, rng);
    auto dp = g.dit.params();
    ck.load_params(dp);
    set_trainable(dp, false);
    return g;
}

// ---------------------------------------------------------------- inference

flow::VelocityField latent_field(const LatentGenerator &g, const GridDims &dims, const TokenGrid *z_sem,
                                 const synth::FactorSpec *cond) {
    if (z_sem && !g.has_semantics()) {
        throw InternalError("layout guard: " + stage_name(g.cfg.stage) + " takes no semantic tokens");
    }
    if (!z_sem && g.has_semantics()) throw ConfigError("this latent generator needs semantic tokens");
    auto seq = std::make_shared<dit::TokenSequence>(dit::build_sequence(dims.t, dims.h, dims.w, z_sem));
    auto masks = std::make_shared<std::vector<AttentionMask>>(dit::build_masks(*seq, g.cfg.layout, g.dit.cfg.blocks));
    Tensor cond_rows, sem_rows;
    {
        NoGradGuard ng;
        cond_rows = dit::condition_tokens(cond, g.dit);
        if (z_sem) sem_rows = z_sem->tensor();
    }
    return [&g, seq, masks, cond_rows, sem_rows](const Tensor &z, double t) {
        return dit::dit_forward(*seq, z, sem_rows, cond_rows, t, g.dit, *masks);
    };
}

namespace {

flow::VelocityField semantic_field(const SemanticGenerator &g, const GridDims &dims, const synth::FactorSpec *cond) {
    auto seq = std::make_shared<dit::TokenSequence>(dit::build_sequence(dims.t, dims.h, dims.w, nullptr));
    auto masks = std::make_shared<std::vector<AttentionMask>>(dit::build_masks(*seq, g.cfg.layout, g.dit.cfg.blocks));
    Tensor cond_rows;
    {
        NoGradGuard ng;
        cond_rows = dit::condition_tokens(cond, g.dit);
    }
    return [&g, seq, masks, cond_rows](const Tensor &z, double t) {
        return dit::dit_forward(*seq, z, Tensor(), cond_rows, t, g.dit, *masks);
    };
}

// Semantic grid dims for a latent grid, from the ratio the model trained at.
GridDims sem_dims_for(const LatentGenerator &g, const GridDims &lat) {
    const auto &m = g.dit.cfg;
    const std::size_t r = m.max_t / m.sem_max_t;
    if (r == 0 || lat.t % r != 0) {
        throw ConfigError("latent length " + std::to_string(lat.t) + " is not a multiple of the semantic ratio " +
                          std::to_string(r));
    }
    return {lat.t / r, m.sem_h, m.sem_w};
}

synth::Video sample_latent_and_decode(const LatentGenerator &latent, const ae::AeParams &ae, const GridDims &lat,
                                      const TokenGrid *z_sem, const synth::FactorSpec *cond, const GenerateOptions &opts,
                                      Rng &rng) {
    flow::SamplerConfig sc;
    sc.steps = opts.sampler_steps;
    const Tensor z = flow::euler_sample(latent_field(latent, lat, z_sem, cond), Shape{lat.tokens(), ae.cfg.c_z}, sc, rng);
    const TokenGrid grid = TokenGrid::from_tensor(z, lat.t, lat.h, lat.w);
    return ae::ae_decode(ae::destandardize(grid, ae), ae, opts.fps);
}

}  // namespace

void check_compatible(const SemanticGenerator &sem, const LatentGenerator &latent, const ae::AeParams &ae) {
    if (latent.dit.cfg.c_target != ae.cfg.c_z || latent.ae_hash != ae.hash()) {
        throw ConfigError("latent generator (trained on autoencoder " + hex64(latent.ae_hash) + ", c_z=" +
                          std::to_string(latent.dit.cfg.c_target) + ") does not match autoencoder checkpoint (" +
                          hex64(ae.hash()) + ", c_z=" + std::to_string(ae.cfg.c_z) + ")");
    }
    if (!latent.has_semantics()) return;
    if (sem.dit.cfg.c_target != latent.compressor.d_c || sem.compressor_hash != latent.compressor.hash()) {
        throw ConfigError("semantic generator (compressor " + hex64(sem.compressor_hash) + ", d_c=" +
                          std::to_string(sem.dit.cfg.c_target) + ") does not match latent generator (compressor " +
                          hex64(latent.compressor.hash()) + ", d_c=" + std::to_string(latent.compressor.d_c) + ")");
    }
}

synth::Video generate(const synth::FactorSpec *cond, const SemanticGenerator *sem, const LatentGenerator &latent,
                      const ae::AeParams &ae, const GenerateOptions &opts) {
    const GridDims lat = latent_dims(opts.frames, opts.height, opts.width, ae.cfg);
    Rng root(opts.seed);
    Rng sem_noise = root.split(1), corrupt_noise = root.split(2), latent_noise = root.split(3);
    if (!latent.has_semantics()) {
        if (sem) throw InternalError("layout guard: " + stage_name(latent.cfg.stage) + " takes no semantic tokens");
        return sample_latent_and_decode(latent, ae, lat, nullptr, cond, opts, latent_noise);
    }
    if (!sem) throw DependencyError("generation with semantics needs a semantic generator");
    check_compatible(*sem, latent, ae);
    const GridDims sd = sem_dims_for(latent, lat);
    flow::SamplerConfig sc;
    sc.steps = opts.sampler_steps;
    const Tensor s = flow::euler_sample(semantic_field(*sem, sd, cond), Shape{sd.tokens(), latent.compressor.d_c}, sc,
                                        sem_noise);
    TokenGrid z = TokenGrid::from_tensor(s, sd.t, sd.h, sd.w);
    for (std::size_t i = 0; i < z.tokens(); ++i)
        for (std::size_t c = 0; c < z.channels; ++c) z.at(i, c) = z.at(i, c) * latent.sem_std[c] + latent.sem_mean[c];
    const TokenGrid zc = sem::corrupt_semantics(z, opts.noise_level, corrupt_noise);
    return sample_latent_and_decode(latent, ae, lat, &zc, cond, opts, latent_noise);
}

synth::Video generate_long(const synth::FactorSpec *cond, const SemanticGenerator *sem,
                           const LatentGenerator &latent, const ae::AeParams &ae, const GenerateOptions &opts) {
    if (latent.cfg.layout.mode != dit::LayoutMode::kSwinInterleaved) {
        throw ConfigError("long generation needs a swin_interleaved latent generator, got " +
                          dit::layout_name(latent.cfg.layout.mode));
    }
    const GridDims lat = latent_dims(opts.frames, opts.height, opts.width, ae.cfg);
    if (lat.t % latent.cfg.layout.window != 0) {
        throw ConfigError("F_long=" + std::to_string(opts.frames) + " gives " + std::to_string(lat.t) +
                          " latent steps, not a multiple of the window T_w=" + std::to_string(latent.cfg.layout.window));
    }
    return generate(cond, sem, latent, ae, opts);
}

synth::Video generate_from_reference(const synth::Video &reference, const synth::FactorSpec *cond,
                                     const LatentGenerator &latent, const FrozenModules &frozen,
                                     const GenerateOptions &opts) {
    if (!latent.has_semantics()) throw ConfigError("reference conditioning needs a latent generator with semantics");
    require_frozen(frozen, latent.source);
    const TokenGrid ref_latent = mean_latent(reference, *frozen.ae);
    const TokenGrid raw = raw_representation(reference, ref_latent, frozen, latent.source);
    Rng root(opts.seed);
    Rng corrupt_noise = root.split(2), latent_noise = root.split(3);
    const TokenGrid zc = sem::corrupt_semantics(compressed_mean(raw, latent.compressor), opts.noise_level, corrupt_noise);
    const GridDims lat = latent_dims(reference.frames, reference.height, reference.width, frozen.ae->cfg);
    return sample_latent_and_decode(latent, *frozen.ae, lat, &zc, cond, opts, latent_noise);
}

// ---------------------------------------------------------------- fairness

void check_fairness(const std::vector<RunFingerprint> &runs) {
    for (std::size_t i = 1; i < runs.size(); ++i) {
        const auto &a = runs[0], &b = runs[i];
        const auto fail = [&](const std::string &what, std::uint64_t x, std::uint64_t y) {
            throw FairnessError("matched runs '" + a.name + "' and '" + b.name + "' differ in " + what + " (" + hex64(x) +
                                " vs " + hex64(y) + ")");
        };
        if (a.corpus_hash != b.corpus_hash) fail("corpus hash", a.corpus_hash, b.corpus_hash);
        if (a.budget_hash != b.budget_hash) fail("budget (steps/optimizer/seed)", a.budget_hash, b.budget_hash);
        if (a.data_order_hash != b.data_order_hash) fail("data order", a.data_order_hash, b.data_order_hash);
    }
}

// ---------------------------------------------------------------- run dirs

std::filesystem::path artifact_root(const std::filesystem::path &fallback) {
    if (const char *env = std::getenv("SEMGEN_ARTIFACTS"); env && *env) return env;
    return fallback;
}

void write_config_snapshot(const std::filesystem::path &run_dir, const json &config) {
    std::filesystem::create_directories(run_dir);
    io::write_text(run_dir / "config.json", config.dump(2) + "\n");
}

void save_sample(const std::filesystem::path &run_dir, const std::string &stem, const synth::Video &v) {
    const auto dir = run_dir / "samples";
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / (stem + ".bin"), std::ios::binary);
    if (!os) throw DependencyError("cannot write " + (dir / (stem + ".bin")).string());
    std::ostringstream header;
    header.precision(17);
    header << v.frames << ' ' << v.channels << ' ' << v.height << ' ' << v.width << ' ' << v.fps << '\n';
    os << header.str();
    io::write_f32_le(os, v.pixels);
    if (!os) throw DependencyError("short write to " + (dir / (stem + ".bin")).string());
    write_filmstrip_png(dir / (stem + ".png"), v);
}

synth::Video load_sample(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DependencyError("sample " + path.string() + " not found");
    std::size_t f = 0, c = 0, h = 0, w = 0;
    double fps = 0.0;
    std::string line;
    std::getline(is, line);
    std::istringstream hs(line);
    if (!(hs >> f >> c >> h >> w >> fps)) throw ValidationError(path.string() + ": bad sample header");
    synth::Video v(f, c, h, w, fps);
    v.pixels = io::read_f32_le(is, v.pixels.size());
    return v;
}

void write_filmstrip_png(const std::filesystem::path &path, const synth::Video &v) {
    if (v.channels != 3) throw ValidationError("filmstrips need RGB video");
    const std::size_t W = v.frames * v.width, H = v.height;
    std::vector<unsigned char> rgb(W * H * 3);
    for (std::size_t f = 0; f < v.frames; ++f)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < v.width; ++x)
                for (std::size_t c = 0; c < 3; ++c) {
                    const double p = std::clamp(v.at(f, c, y, x), 0.0, 1.0);
                    rgb[(y * W + f * v.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(p * 255.0));
                }
    FILE *fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw DependencyError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DependencyError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < H; ++y) png_write_row(png, rgb.data() + y * W * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace semgen::pipeline
