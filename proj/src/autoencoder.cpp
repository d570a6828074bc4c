#include "semgen/autoencoder.hpp"

#include <algorithm>
#include <cmath>

#include "semgen/errors.hpp"
#include "semgen/semantics.hpp"

namespace semgen::ae {

void AeConfig::check_video(std::size_t frames, std::size_t height, std::size_t width) const {
    if (f_t == 0 || f_s == 0 || frames % f_t != 0 || height % f_s != 0 || width % f_s != 0) {
        throw ConfigError("video " + std::to_string(frames) + "x" + std::to_string(height) + "x" +
                          std::to_string(width) + " is not divisible by (f_t=" + std::to_string(f_t) +
                          ", f_s=" + std::to_string(f_s) + ")");
    }
}

AeParams::AeParams(const AeConfig &c, Rng &rng) : cfg(c) {
    const std::size_t h = cfg.hidden;
    enc_in = nn::Linear(cfg.patch_dim(), h, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) enc_blocks.emplace_back(h, h, rng);
    enc_mean = nn::Linear(h, cfg.c_z, rng);
    enc_logvar = nn::Linear(h, cfg.c_z, rng, 0.1);
    // Start with a small posterior std so early reconstructions are not
    // swamped by sampling noise.
    std::fill(enc_logvar.bias.mutable_data().begin(), enc_logvar.bias.mutable_data().end(), -6.0);
    dec_in = nn::Linear(cfg.c_z, h, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) dec_blocks.emplace_back(h, h, rng);
    dec_out = nn::Linear(h, cfg.patch_dim(), rng, 0.5);
    std::fill(dec_out.bias.mutable_data().begin(), dec_out.bias.mutable_data().end(), 0.5);
    latent_mean.assign(cfg.c_z, 0.0);
    latent_std.assign(cfg.c_z, 1.0);
}

ParamList AeParams::params() const {
    ParamList out;
    enc_in.collect(out, "enc_in");
    for (std::size_t b = 0; b < enc_blocks.size(); ++b) enc_blocks[b].collect(out, "enc_block" + std::to_string(b));
    enc_mean.collect(out, "enc_mean");
    enc_logvar.collect(out, "enc_logvar");
    dec_in.collect(out, "dec_in");
    for (std::size_t b = 0; b < dec_blocks.size(); ++b) dec_blocks[b].collect(out, "dec_block" + std::to_string(b));
    dec_out.collect(out, "dec_out");
    return out;
}

std::size_t AeParams::param_count() const { return semgen::param_count(params()); }

void AeParams::save(const std::filesystem::path &path) const {
    Checkpoint ck;
    ck.meta = {{"module", "autoencoder"}, {"f_t", cfg.f_t},       {"f_s", cfg.f_s},
               {"c_z", cfg.c_z},          {"channels", cfg.channels}, {"hidden", cfg.hidden},
               {"blocks", cfg.blocks},    {"beta", cfg.beta},     {"logvar_min", cfg.logvar_min},
               {"logvar_max", cfg.logvar_max}, {"latent_mean", latent_mean}, {"latent_std", latent_std},
               {"frozen", frozen},        {"param_count", param_count()}};
    ck.add_params(params());
    save_checkpoint(path, ck);
}

AeParams AeParams::load(const std::filesystem::path &path) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("module", "") != "autoencoder") throw ConfigError(path.string() + " is not an autoencoder checkpoint");
    AeConfig c;
    const auto &m = ck.meta;
    c.f_t = m.at("f_t");
    c.f_s = m.at("f_s");
    c.c_z = m.at("c_z");
    c.channels = m.at("channels");
    c.hidden = m.at("hidden");
    c.blocks = m.at("blocks");
    c.beta = m.at("beta");
    c.logvar_min = m.at("logvar_min");
    c.logvar_max = m.at("logvar_max");
    Rng rng(0);
    AeParams p(c, rng);
    auto ps = p.params();
    ck.load_params(ps);
    p.latent_mean = m.at("latent_mean").get<std::vector<double>>();
    p.latent_std = m.at("latent_std").get<std::vector<double>>();
    p.frozen = m.at("frozen");
    return p;
}

Tensor patchify(const synth::Video &v, const AeConfig &cfg) {
    cfg.check_video(v.frames, v.height, v.width);
    if (v.channels != cfg.channels) throw DimensionError("autoencoder expects " + std::to_string(cfg.channels) + " channels");
    const std::size_t tz = v.frames / cfg.f_t, hz = v.height / cfg.f_s, wz = v.width / cfg.f_s;
    const std::size_t pd = cfg.patch_dim();
    std::vector<double> rows(tz * hz * wz * pd);
    std::size_t k = 0;
    for (std::size_t t = 0; t < tz; ++t)
        for (std::size_t y = 0; y < hz; ++y)
            for (std::size_t x = 0; x < wz; ++x)
                for (std::size_t dt = 0; dt < cfg.f_t; ++dt)
                    for (std::size_t c = 0; c < cfg.channels; ++c)
                        for (std::size_t dy = 0; dy < cfg.f_s; ++dy)
                            for (std::size_t dx = 0; dx < cfg.f_s; ++dx)
                                rows[k++] = v.at(t * cfg.f_t + dt, c, y * cfg.f_s + dy, x * cfg.f_s + dx);
    return Tensor({tz * hz * wz, pd}, std::move(rows));
}

synth::Video unpatchify(const std::vector<double> &rows, const AeConfig &cfg, std::size_t frames,
                        std::size_t height, std::size_t width, double fps) {
    cfg.check_video(frames, height, width);
    synth::Video v(frames, cfg.channels, height, width, fps);
    const std::size_t tz = frames / cfg.f_t, hz = height / cfg.f_s, wz = width / cfg.f_s;
    if (rows.size() != tz * hz * wz * cfg.patch_dim()) throw DimensionError("unpatchify: row count mismatch");
    std::size_t k = 0;
    for (std::size_t t = 0; t < tz; ++t)
        for (std::size_t y = 0; y < hz; ++y)
            for (std::size_t x = 0; x < wz; ++x)
                for (std::size_t dt = 0; dt < cfg.f_t; ++dt)
                    for (std::size_t c = 0; c < cfg.channels; ++c)
                        for (std::size_t dy = 0; dy < cfg.f_s; ++dy)
                            for (std::size_t dx = 0; dx < cfg.f_s; ++dx)
                                v.at(t * cfg.f_t + dt, c, y * cfg.f_s + dy, x * cfg.f_s + dx) = rows[k++];
    return v;
}

Encoded encode_tensors(const Tensor &patches, const AeParams &p, Rng *rng) {
    Tensor h = p.enc_in(add_scalar(patches, -0.5));
    for (const auto &b : p.enc_blocks) h = b(h);
    Encoded e;
    e.mean = p.enc_mean(h);
    e.logvar = clamp(p.enc_logvar(h), p.cfg.logvar_min, p.cfg.logvar_max);
    if (rng) {
        const Tensor xi = Tensor::randn(e.mean.shape(), *rng);
        e.z = add(e.mean, mul(exp(scale(e.logvar, 0.5)), xi));
    } else {
        e.z = e.mean;
    }
    return e;
}

Tensor decode_tensor(const Tensor &z, const AeParams &p) {
    Tensor h = p.dec_in(z);
    for (const auto &b : p.dec_blocks) h = b(h);
    return p.dec_out(h);
}

TokenGrid ae_encode(const synth::Video &v, const AeParams &p, Rng &rng, bool sample) {
    NoGradGuard ng;
    const Tensor patches = patchify(v, p.cfg);
    const Encoded e = encode_tensors(patches, p, sample ? &rng : nullptr);
    return TokenGrid::from_tensor(e.z, v.frames / p.cfg.f_t, v.height / p.cfg.f_s, v.width / p.cfg.f_s);
}

synth::Video ae_decode(const TokenGrid &z, const AeParams &p, double fps) {
    NoGradGuard ng;
    if (z.channels != p.cfg.c_z) {
        throw DimensionError("ae_decode: grid " + z.dims_str() + " has " + std::to_string(z.channels) +
                             " channels, decoder expects c_z=" + std::to_string(p.cfg.c_z));
    }
    const Tensor out = decode_tensor(z.tensor(), p);
    std::vector<double> rows(out.data().begin(), out.data().end());
    for (auto &r : rows) r = std::clamp(r, 0.0, 1.0);
    return unpatchify(rows, p.cfg, z.t * p.cfg.f_t, z.h * p.cfg.f_s, z.w * p.cfg.f_s, fps);
}

TokenGrid standardize(const TokenGrid &z, const AeParams &p) {
    TokenGrid out = z;
    for (std::size_t i = 0; i < z.tokens(); ++i)
        for (std::size_t c = 0; c < z.channels; ++c)
            out.at(i, c) = (z.at(i, c) - p.latent_mean[c]) / p.latent_std[c];
    return out;
}

TokenGrid destandardize(const TokenGrid &z, const AeParams &p) {
    TokenGrid out = z;
    for (std::size_t i = 0; i < z.tokens(); ++i)
        for (std::size_t c = 0; c < z.channels; ++c)
            out.at(i, c) = z.at(i, c) * p.latent_std[c] + p.latent_mean[c];
    return out;
}

AeLoss ae_loss(const std::vector<const synth::Video *> &batch, const AeParams &p, Rng &rng) {
    std::vector<Tensor> patches;
    for (const auto *v : batch) patches.push_back(patchify(*v, p.cfg));
    const Tensor x = concat_rows(patches);
    const Encoded e = encode_tensors(x, p, &rng);
    const Tensor recon = mse(decode_tensor(e.z, p), x);
    AeLoss out;
    out.recon = recon.item();
    if (p.cfg.beta > 0.0) {
        const Tensor kl = sem::kl_diag_gaussian(e.mean, e.logvar);
        out.kl = kl.item();
        out.total = add(recon, scale(kl, p.cfg.beta));
    } else {
        out.total = recon;
    }
    return out;
}

double video_mse(const synth::Video &a, const synth::Video &b) {
    if (a.pixels.size() != b.pixels.size()) throw DimensionError("video_mse: videos differ in size");
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    return s / static_cast<double>(a.pixels.size());
}

double psnr(const synth::Video &a, const synth::Video &b) {
    const double m = video_mse(a, b);
    return m > 0.0 ? 10.0 * std::log10(1.0 / m) : 99.0;
}

void compute_latent_stats(AeParams &p, const std::vector<synth::Clip> &corpus) {
    const std::size_t c = p.cfg.c_z;
    std::vector<double> s(c, 0.0), s2(c, 0.0);
    double n = 0.0;
    Rng unused(0);
    for (const auto &clip : corpus) {
        const TokenGrid z = ae_encode(clip.video, p, unused, false);
        for (std::size_t i = 0; i < z.tokens(); ++i)
            for (std::size_t k = 0; k < c; ++k) {
                s[k] += z.at(i, k);
                s2[k] += z.at(i, k) * z.at(i, k);
            }
        n += static_cast<double>(z.tokens());
    }
    for (std::size_t k = 0; k < c; ++k) {
        p.latent_mean[k] = s[k] / n;
        p.latent_std[k] = std::sqrt(std::max(s2[k] / n - p.latent_mean[k] * p.latent_mean[k], 1e-12));
    }
}

AeParams train_autoencoder(const std::vector<synth::Clip> &corpus, const AeConfig &cfg, const AeTrainOptions &opts,
                           TrainResult *result) {
    if (corpus.empty()) throw ConfigError("train_autoencoder: empty corpus");
    Rng init(opts.train.seed);
    AeParams p(cfg, init);
    ParamList params = p.params();
    const auto step = [&](std::size_t, Rng &rng, Fnv1a &order) {
        std::vector<const synth::Video *> batch;
        for (std::size_t b = 0; b < opts.batch; ++b) {
            const std::size_t idx = rng.below(corpus.size());
            order.update(&idx, sizeof idx);
            batch.push_back(&corpus[idx].video);
        }
        AeLoss l = ae_loss(batch, p, rng);
        l.total.backward();
        return l.total.item();
    };
    nlohmann::json meta = {{"module", "autoencoder"}};
    TrainResult res = run_training(params, opts.train, step, meta);
    if (result) *result = res;
    compute_latent_stats(p, corpus);
    set_trainable(params, false);
    p.frozen = true;
    return p;
}

}  // namespace semgen::ae
