#include "semgen/semantics.hpp"

#include <algorithm>
#include <cmath>

#include "semgen/checkpoint.hpp"
#include "semgen/errors.hpp"

namespace semgen::sem {

Tensor kl_diag_gaussian(const Tensor &mean, const Tensor &logvar) {
    if (mean.shape() != logvar.shape() || mean.rank() != 2) {
        throw DimensionError("kl_diag_gaussian: mean " + shape_str(mean.shape()) + " vs logvar " +
                             shape_str(logvar.shape()));
    }
    const auto m = mean.data(), lv = logvar.data();
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(m[i]) || !std::isfinite(lv[i])) throw NumericError("kl_diag_gaussian: non-finite input");
        s += std::exp(lv[i]) + m[i] * m[i] - 1.0 - lv[i];
    }
    const double inv_rows = 1.0 / static_cast<double>(mean.rows());
    return make_op({}, {0.5 * s * inv_rows}, {mean, logvar},
                   [mean, logvar, inv_rows](std::span<const double> g) mutable {
                       const auto m = mean.data(), lv = logvar.data();
                       const double f = 0.5 * g[0] * inv_rows;
                       if (mean.requires_grad()) {
                           auto gm = mean.mutable_grad();
                           for (std::size_t i = 0; i < m.size(); ++i) gm[i] += f * 2.0 * m[i];
                       }
                       if (logvar.requires_grad()) {
                           auto gl = logvar.mutable_grad();
                           for (std::size_t i = 0; i < lv.size(); ++i) gl[i] += f * (std::exp(lv[i]) - 1.0);
                       }
                   });
}

void SemConfig::validate() const {
    if (patch < 2 || patch % 2 != 0 || height % patch != 0 || width % patch != 0) {
        throw ConfigError("semantic patch " + std::to_string(patch) + " must be even and divide the frame " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    if (chunk_frames == 0 || chunk_frames % 2 != 0) throw ConfigError("semantic chunk frames must be even");
    if (heads == 0 || d % heads != 0) throw ConfigError("sem.heads must divide sem.d");
}

void EncoderBlock::collect(ParamList &out, const std::string &prefix) const {
    out.push_back({prefix + ".norm1", norm1});
    out.push_back({prefix + ".norm2", norm2});
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
    up.collect(out, prefix + ".up");
    down.collect(out, prefix + ".down");
}

SemanticEncoderParams::SemanticEncoderParams(const SemConfig &c, Rng &rng) : cfg(c) {
    cfg.validate();
    const std::size_t d = cfg.d;
    embed = nn::Linear(cfg.token_dim(), d, rng);
    pos = nn::Embedding(cfg.chunk_frames * cfg.token_h() * cfg.token_w(), d, rng, 0.1);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        EncoderBlock blk;
        blk.norm1 = Tensor::full({d}, 1.0, true);
        blk.norm2 = Tensor::full({d}, 1.0, true);
        blk.wq = nn::Linear(d, d, rng, 1.0, false);
        blk.wk = nn::Linear(d, d, rng, 1.0, false);
        blk.wv = nn::Linear(d, d, rng, 1.0, false);
        blk.wo = nn::Linear(d, d, rng, 0.5);
        blk.up = nn::Linear(d, 2 * d, rng);
        blk.down = nn::Linear(2 * d, d, rng, 0.5);
        blocks.push_back(std::move(blk));
    }
    for (std::size_t k = 0; k < 8; ++k) merge.emplace_back(d, d, rng, std::sqrt(0.125), k == 0);
    out_norm = Tensor::full({d}, 1.0, true);
    head_shape = nn::Linear(d, cfg.vocab.shapes, rng, 0.1);
    head_color = nn::Linear(d, cfg.vocab.colors, rng, 0.1);
    head_background = nn::Linear(d, cfg.vocab.backgrounds, rng, 0.1);
    head_motion = nn::Linear(d, cfg.vocab.motions, rng, 0.1);
    head_velocity = nn::Linear(d, 2, rng, 0.1);
}

ParamList SemanticEncoderParams::trunk_params() const {
    ParamList out;
    embed.collect(out, "embed");
    pos.collect(out, "pos");
    for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(out, "block" + std::to_string(b));
    for (std::size_t k = 0; k < merge.size(); ++k) merge[k].collect(out, "merge" + std::to_string(k));
    out.push_back({"out_norm", out_norm});
    return out;
}

ParamList SemanticEncoderParams::params() const {
    ParamList out = trunk_params();
    head_shape.collect(out, "head_shape");
    head_color.collect(out, "head_color");
    head_background.collect(out, "head_background");
    head_motion.collect(out, "head_motion");
    head_velocity.collect(out, "head_velocity");
    return out;
}

namespace {

nlohmann::json sem_meta(const SemConfig &c) {
    return {{"module", "semantic_encoder"},
            {"patch", c.patch},
            {"d", c.d},
            {"blocks", c.blocks},
            {"heads", c.heads},
            {"chunk_frames", c.chunk_frames},
            {"height", c.height},
            {"width", c.width},
            {"channels", c.channels},
            {"fps", c.fps},
            {"semantic_fps", c.semantic_fps},
            {"norm_eps", c.norm_eps},
            {"vocab", {c.vocab.shapes, c.vocab.colors, c.vocab.backgrounds, c.vocab.motions}}};
}

}  // namespace

void SemanticEncoderParams::save(const std::filesystem::path &path) const {
    Checkpoint ck;
    ck.meta = sem_meta(cfg);
    ck.add_params(params());
    save_checkpoint(path, ck);
}

SemanticEncoderParams SemanticEncoderParams::load(const std::filesystem::path &path) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("module", "") != "semantic_encoder") {
        throw ConfigError(path.string() + " is not a semantic encoder checkpoint");
    }
    SemConfig c;
    const auto &m = ck.meta;
    c.patch = m.at("patch");
    c.d = m.at("d");
    c.blocks = m.at("blocks");
    c.heads = m.at("heads");
    c.chunk_frames = m.at("chunk_frames");
    c.height = m.at("height");
    c.width = m.at("width");
    c.channels = m.at("channels");
    c.fps = m.at("fps");
    c.semantic_fps = m.at("semantic_fps");
    c.norm_eps = m.at("norm_eps");
    c.vocab.shapes = m.at("vocab")[0];
    c.vocab.colors = m.at("vocab")[1];
    c.vocab.backgrounds = m.at("vocab")[2];
    c.vocab.motions = m.at("vocab")[3];
    Rng rng(0);
    SemanticEncoderParams p(c, rng);
    auto ps = p.params();
    ck.load_params(ps);
    return p;
}

Tensor semantic_patches(const synth::Video &v, std::size_t first_frame, const SemConfig &cfg) {
    const std::size_t th = cfg.token_h(), tw = cfg.token_w(), ps = cfg.token_px(), c = cfg.channels;
    if (v.height != cfg.height || v.width != cfg.width || v.channels != c) {
        throw DimensionError("semantic encoder expects " + std::to_string(cfg.height) + "x" +
                             std::to_string(cfg.width) + " frames with " + std::to_string(c) + " channels");
    }
    const std::size_t n = cfg.chunk_frames * th * tw;
    std::vector<double> rows(n * cfg.token_dim());
    std::size_t r = 0;
    for (std::size_t f = 0; f < cfg.chunk_frames; ++f)
        for (std::size_t y = 0; y < th; ++y)
            for (std::size_t x = 0; x < tw; ++x, ++r) {
                std::size_t k = r * cfg.token_dim();
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t dy = 0; dy < ps; ++dy)
                        for (std::size_t dx = 0; dx < ps; ++dx)
                            rows[k++] = v.at(first_frame + f, ch, y * ps + dy, x * ps + dx) - 0.5;
            }
    return Tensor({n, cfg.token_dim()}, std::move(rows));
}

Tensor encode_chunk(const Tensor &patches, const SemanticEncoderParams &p) {
    const auto &cfg = p.cfg;
    const std::size_t th = cfg.token_h(), tw = cfg.token_w();
    const std::size_t n = cfg.chunk_frames * th * tw;
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    Tensor x = add(p.embed(patches), p.pos(all));
    const AttentionMask mask = AttentionMask::full(n);
    for (const auto &b : p.blocks) {
        const Tensor h = rms_norm(x, b.norm1, Tensor(), cfg.norm_eps);
        x = add(x, b.wo(multi_head_attention(b.wq(h), b.wk(h), b.wv(h), cfg.heads, mask)));
        const Tensor h2 = rms_norm(x, b.norm2, Tensor(), cfg.norm_eps);
        x = add(x, b.down(silu(b.up(h2))));
    }
    // Output token (k, y, x) concatenates input tokens (2k+dt, 2y+dy, 2x+dx).
    Tensor merged;
    for (std::size_t dt = 0; dt < 2; ++dt)
        for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
                std::vector<std::size_t> rows;
                for (std::size_t k = 0; k < cfg.chunk_frames / 2; ++k)
                    for (std::size_t y = 0; y < cfg.grid_h(); ++y)
                        for (std::size_t xx = 0; xx < cfg.grid_w(); ++xx)
                            rows.push_back(((2 * k + dt) * th + 2 * y + dy) * tw + 2 * xx + dx);
                const Tensor part = p.merge[(dt * 2 + dy) * 2 + dx](gather_rows(x, rows));
                merged = merged.defined() ? add(merged, part) : part;
            }
    return rms_norm(merged, p.out_norm, Tensor(), cfg.norm_eps);
}

namespace {

synth::Video to_semantic_rate(const synth::Video &v, const SemConfig &cfg) {
    const synth::Video s = synth::subsample_frames(v, cfg.semantic_fps);
    if (s.frames % 2 != 0) {
        throw ValidationError("semantic encoder needs an even subsampled frame count, got F_s=" +
                              std::to_string(s.frames));
    }
    if (s.frames % cfg.chunk_frames != 0) {
        throw ValidationError("F_s=" + std::to_string(s.frames) + " is not a multiple of the encoder chunk (" +
                              std::to_string(cfg.chunk_frames) + " frames)");
    }
    return s;
}

Tensor encoded_tokens(const synth::Video &v, const SemanticEncoderParams &p) {
    const synth::Video s = to_semantic_rate(v, p.cfg);
    std::vector<Tensor> chunks;
    for (std::size_t f = 0; f < s.frames; f += p.cfg.chunk_frames) {
        chunks.push_back(encode_chunk(semantic_patches(s, f, p.cfg), p));
    }
    return concat_rows(chunks);
}

Tensor pooled_features(const synth::Video &v, const SemanticEncoderParams &p) { return mean_rows(encoded_tokens(v, p)); }

std::vector<double> softmax(std::span<const double> z) {
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double tot = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) tot += out[i] = std::exp(z[i] - mx);
    for (auto &o : out) o /= tot;
    return out;
}

std::size_t argmax(const std::vector<double> &v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TokenGrid sem_encode(const synth::Video &v, const SemanticEncoderParams &p) {
    NoGradGuard ng;
    const auto &cfg = p.cfg;
    const synth::Video s = to_semantic_rate(v, cfg);
    const std::size_t half = cfg.chunk_frames / 2;
    TokenGrid out(s.frames / 2, cfg.grid_h(), cfg.grid_w(), cfg.d);
    const std::size_t chunk_values = half * cfg.grid_h() * cfg.grid_w() * cfg.d;
    for (std::size_t f = 0, c = 0; f < s.frames; f += cfg.chunk_frames, ++c) {
        const Tensor z = encode_chunk(semantic_patches(s, f, cfg), p);
        std::copy(z.data().begin(), z.data().end(), out.values.begin() + static_cast<std::ptrdiff_t>(c * chunk_values));
    }
    return out;
}

std::size_t FactorPrediction::shape() const { return argmax(shape_prob); }
std::size_t FactorPrediction::color() const { return argmax(color_prob); }
std::size_t FactorPrediction::background() const { return argmax(background_prob); }
std::size_t FactorPrediction::motion() const { return argmax(motion_prob); }

FactorPrediction predict_factors(const synth::Video &v, const SemanticEncoderParams &p) {
    NoGradGuard ng;
    const Tensor f = pooled_features(v, p);
    FactorPrediction out;
    out.shape_prob = softmax(p.head_shape(f).data());
    out.color_prob = softmax(p.head_color(f).data());
    out.background_prob = softmax(p.head_background(f).data());
    out.motion_prob = softmax(p.head_motion(f).data());
    const Tensor vel_t = p.head_velocity(f);
    const auto vel = vel_t.data();
    out.velocity = {vel[0], vel[1]};
    return out;
}

FactorScores score_factors(const std::vector<synth::Clip> &clips, const SemanticEncoderParams &p) {
    FactorScores s;
    if (clips.empty()) return s;
    for (const auto &c : clips) {
        const auto pr = predict_factors(c.video, p);
        s.shape_acc += pr.shape() == c.factors.shape_id;
        s.color_acc += pr.color() == c.factors.color;
        s.background_acc += pr.background() == c.factors.background_id;
        s.motion_acc += pr.motion() == static_cast<std::size_t>(c.factors.motion);
        s.velocity_mae += 0.5 * (std::abs(pr.velocity[0] - c.factors.velocity[0]) +
                                 std::abs(pr.velocity[1] - c.factors.velocity[1]));
    }
    const double n = static_cast<double>(clips.size());
    s.shape_acc /= n;
    s.color_acc /= n;
    s.background_acc /= n;
    s.motion_acc /= n;
    s.velocity_mae /= n;
    return s;
}

SemanticEncoderParams pretrain_semantic_encoder(const std::vector<synth::Clip> &corpus, const SemConfig &cfg,
                                                const PretrainOptions &opts, TrainResult *result) {
    if (corpus.empty()) throw ConfigError("pretrain_semantic_encoder: empty corpus");
    Rng init(opts.train.seed);
    SemanticEncoderParams p(cfg, init);
    ParamList params = p.params();
    const auto step = [&](std::size_t, Rng &rng, Fnv1a &order) {
        Tensor total;
        for (std::size_t b = 0; b < opts.batch; ++b) {
            const std::size_t idx = rng.below(corpus.size());
            order.update(&idx, sizeof idx);
            const auto &clip = corpus[idx];
            const Tensor tokens = encoded_tokens(clip.video, p);
            const Tensor f = mean_rows(tokens);
            const auto &fs = clip.factors;
            Tensor loss = add(add(cross_entropy(p.head_shape(f), fs.shape_id), cross_entropy(p.head_color(f), fs.color)),
                              add(cross_entropy(p.head_background(f), fs.background_id),
                                  cross_entropy(p.head_motion(f), static_cast<std::size_t>(fs.motion))));
            const Tensor vel_target({1, 2}, {fs.velocity[0], fs.velocity[1]});
            loss = add(loss, scale(mse(p.head_velocity(f), vel_target), opts.velocity_weight));
            if (opts.consistency_weight > 0.0) {
                synth::Video noisy = clip.video;
                for (auto &px : noisy.pixels) {
                    px = std::clamp(px + rng.uniform(-opts.augment_amplitude, opts.augment_amplitude), 0.0, 1.0);
                }
                loss = add(loss, scale(mse(encoded_tokens(noisy, p), tokens), opts.consistency_weight));
            }
            total = total.defined() ? add(total, loss) : loss;
        }
        total = scale(total, 1.0 / static_cast<double>(opts.batch));
        total.backward();
        return total.item();
    };
    TrainResult res = run_training(params, opts.train, step, sem_meta(cfg));
    if (result) *result = res;
    const FactorScores s = score_factors(corpus, p);
    if (s.shape_acc <= 1.0 / static_cast<double>(cfg.vocab.shapes)) {
        throw NumericError("semantic encoder pretraining failed: shape accuracy " + std::to_string(s.shape_acc) +
                           " is not above chance");
    }
    set_trainable(params, false);
    return p;
}

// ------------------------------------------------------------- compressor

CompressorParams::CompressorParams(std::size_t d_in, std::size_t dc, Rng &rng) : d(d_in), d_c(dc) {
    if (d_c == 0 || d_c > d) throw ConfigError("compressor width d_c=" + std::to_string(d_c) + " must lie in [1, d]");
    mean = nn::Linear(d, d_c, rng);
    logvar = nn::Linear(d, d_c, rng, 0.1);
}

ParamList CompressorParams::params() const {
    ParamList out;
    mean.collect(out, "mean");
    logvar.collect(out, "logvar");
    return out;
}

void CompressorParams::save(const std::filesystem::path &path) const {
    Checkpoint ck;
    ck.meta = {{"module", "compressor"}, {"d", d}, {"d_c", d_c}, {"logvar_min", logvar_min},
               {"logvar_max", logvar_max}, {"frozen", frozen}};
    ck.add_params(params());
    save_checkpoint(path, ck);
}

CompressorParams CompressorParams::load(const std::filesystem::path &path) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("module", "") != "compressor") throw ConfigError(path.string() + " is not a compressor checkpoint");
    Rng rng(0);
    CompressorParams p(ck.meta.at("d").get<std::size_t>(), ck.meta.at("d_c").get<std::size_t>(), rng);
    p.logvar_min = ck.meta.at("logvar_min");
    p.logvar_max = ck.meta.at("logvar_max");
    p.frozen = ck.meta.at("frozen");
    auto ps = p.params();
    ck.load_params(ps);
    return p;
}

Compressed compress_tensor(const Tensor &raw, const CompressorParams &p, Rng *rng) {
    if (raw.rank() != 2 || raw.cols() != p.d) {
        throw DimensionError("compress: raw semantic width " + (raw.rank() == 2 ? std::to_string(raw.cols()) : shape_str(raw.shape())) +
                             " does not match compressor input d=" + std::to_string(p.d));
    }
    Compressed c;
    c.mean = p.mean(raw);
    c.logvar = clamp(p.logvar(raw), p.logvar_min, p.logvar_max);
    if (rng) {
        const Tensor xi = Tensor::randn(c.mean.shape(), *rng);
        c.z = add(c.mean, mul(exp(scale(c.logvar, 0.5)), xi));
    } else {
        c.z = c.mean;
    }
    return c;
}

CompressResult compress(const TokenGrid &raw, const CompressorParams &p, Rng &rng, bool sample) {
    NoGradGuard ng;
    if (raw.channels != p.d) {
        throw DimensionError("compress: grid " + raw.dims_str() + " has width " + std::to_string(raw.channels) +
                             ", compressor expects d=" + std::to_string(p.d));
    }
    const Compressed c = compress_tensor(raw.tensor(), p, sample ? &rng : nullptr);
    return {TokenGrid::from_tensor(c.z, raw.t, raw.h, raw.w), TokenGrid::from_tensor(c.mean, raw.t, raw.h, raw.w),
            TokenGrid::from_tensor(c.logvar, raw.t, raw.h, raw.w)};
}

Tensor corrupt_tensor(const Tensor &z, double level, Rng &rng) {
    if (!(level >= 0.0 && level <= 1.0)) {
        throw ValidationError("noise level " + std::to_string(level) + " outside [0, 1]");
    }
    if (level == 0.0) return z;
    const Tensor xi = Tensor::randn(z.shape(), rng);
    return add(scale(z, 1.0 - level), scale(xi, level));
}

TokenGrid corrupt_semantics(const TokenGrid &z, double level, Rng &rng) {
    NoGradGuard ng;
    return TokenGrid::from_tensor(corrupt_tensor(z.tensor(), level, rng), z.t, z.h, z.w);
}

}  // namespace semgen::sem
