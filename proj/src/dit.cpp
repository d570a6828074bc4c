#include "semgen/dit.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <tuple>

#include "semgen/errors.hpp"

namespace semgen::dit {

std::size_t TokenSequence::kind_count(TokenKind k) const {
    std::size_t n = 0;
    for (const auto &t : tokens) n += t.kind == k;
    return n;
}

TokenSequence build_sequence(std::size_t t, std::size_t h, std::size_t w, const TokenGrid *sem,
                             std::size_t cond_tokens) {
    TokenSequence seq;
    seq.n_cond = cond_tokens;
    for (std::size_t i = 0; i < cond_tokens; ++i) seq.tokens.push_back({TokenKind::kCondition, i, 0, 0, std::nullopt});
    if (sem) {
        if (sem->t == 0 || t % sem->t != 0) {
            throw ConfigError("semantic grid time " + std::to_string(sem->t) + " does not divide target time " +
                              std::to_string(t));
        }
        const double r = static_cast<double>(t / sem->t);
        for (std::size_t s = 0; s < sem->t; ++s)
            for (std::size_t y = 0; y < sem->h; ++y)
                for (std::size_t x = 0; x < sem->w; ++x)
                    seq.tokens.push_back({TokenKind::kSemantic, s, y, x, s * r + (r - 1.0) / 2.0});
        seq.n_sem = sem->tokens();
    }
    for (std::size_t s = 0; s < t; ++s)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                seq.tokens.push_back({TokenKind::kTarget, s, y, x, static_cast<double>(s)});
    seq.n_target = t * h * w;

    std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> seen;
    for (const auto &p : seq.tokens) {
        if (!seen.insert({static_cast<std::size_t>(p.kind), p.t, p.h, p.w}).second) {
            throw InternalError("duplicate token position in sequence");
        }
    }
    return seq;
}

TokenSequence build_sequence(const TokenGrid &z_t, const TokenGrid *z_sem, std::size_t cond_tokens) {
    return build_sequence(z_t.t, z_t.h, z_t.w, z_sem, cond_tokens);
}

LayoutMode parse_layout(const std::string &s) {
    if (s == "full") return LayoutMode::kFull;
    if (s == "swin_interleaved") return LayoutMode::kSwinInterleaved;
    throw ConfigError("unknown attention layout '" + s + "' (full | swin_interleaved)");
}

std::string layout_name(LayoutMode m) { return m == LayoutMode::kFull ? "full" : "swin_interleaved"; }

void AttentionLayout::validate() const {
    if (mode == LayoutMode::kSwinInterleaved && (window == 0 || window % 2 != 0)) {
        throw ConfigError("swin window T_w=" + std::to_string(window) + " must be even and positive");
    }
}

AttentionMask build_mask(const TokenSequence &seq, const AttentionLayout &layout, std::size_t layer) {
    layout.validate();
    const std::size_t n = seq.size();
    if (layout.mode == LayoutMode::kFull) return AttentionMask::full(n);
    const double shift = static_cast<double>(layout.shift(layer));
    const double tw = static_cast<double>(layout.window);
    std::vector<long> window(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto &p = seq.tokens[i];
        if (p.kind == TokenKind::kCondition) continue;
        if (!p.time) throw InternalError("token " + std::to_string(i) + " has no time coordinate");
        window[i] = static_cast<long>(std::floor((*p.time - shift) / tw));
    }
    AttentionMask m(n, n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const TokenKind ki = seq.tokens[i].kind;
        for (std::size_t j = 0; j < n; ++j) {
            const TokenKind kj = seq.tokens[j].kind;
            bool ok;
            if (ki == TokenKind::kCondition || kj == TokenKind::kCondition) {
                ok = true;
            } else if (ki == TokenKind::kSemantic && kj == TokenKind::kSemantic) {
                ok = true;
            } else {
                ok = window[i] == window[j];
            }
            m.set(i, j, ok);
        }
    }
    return m;
}

std::vector<AttentionMask> build_masks(const TokenSequence &seq, const AttentionLayout &layout, std::size_t layers) {
    std::vector<AttentionMask> out;
    // Even and odd layers share their masks.
    const AttentionMask even = build_mask(seq, layout, 0);
    const AttentionMask odd = layers > 1 ? build_mask(seq, layout, 1) : even;
    for (std::size_t l = 0; l < layers; ++l) out.push_back(l % 2 == 0 ? even : odd);
    return out;
}

nlohmann::json DitConfig::to_json() const {
    return {{"c_model", c_model},   {"blocks", blocks},       {"heads", heads},       {"mlp_ratio", mlp_ratio},
            {"temb_dim", temb_dim}, {"norm_eps", norm_eps},   {"c_target", c_target}, {"c_sem", c_sem},
            {"max_t", max_t},       {"grid_h", grid_h},       {"grid_w", grid_w},     {"sem_max_t", sem_max_t},
            {"sem_h", sem_h},       {"sem_w", sem_w},         {"frame_w", frame_w},   {"frame_h", frame_h},
            {"vocab", {vocab.shapes, vocab.colors, vocab.backgrounds, vocab.motions}}};
}

DitConfig DitConfig::from_json(const nlohmann::json &j) {
    DitConfig c;
    c.c_model = j.at("c_model");
    c.blocks = j.at("blocks");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.temb_dim = j.at("temb_dim");
    c.norm_eps = j.at("norm_eps");
    c.c_target = j.at("c_target");
    c.c_sem = j.at("c_sem");
    c.max_t = j.at("max_t");
    c.grid_h = j.at("grid_h");
    c.grid_w = j.at("grid_w");
    c.sem_max_t = j.at("sem_max_t");
    c.sem_h = j.at("sem_h");
    c.sem_w = j.at("sem_w");
    c.frame_w = j.at("frame_w");
    c.frame_h = j.at("frame_h");
    c.vocab.shapes = j.at("vocab")[0];
    c.vocab.colors = j.at("vocab")[1];
    c.vocab.backgrounds = j.at("vocab")[2];
    c.vocab.motions = j.at("vocab")[3];
    return c;
}

void DitBlock::collect(ParamList &out, const std::string &prefix) const {
    out.push_back({prefix + ".norm1", norm1});
    out.push_back({prefix + ".norm2", norm2});
    mod1.collect(out, prefix + ".mod1");
    mod2.collect(out, prefix + ".mod2");
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
    up.collect(out, prefix + ".up");
    down.collect(out, prefix + ".down");
}

DitParams::DitParams(const DitConfig &c, Rng &rng) : cfg(c) {
    const std::size_t C = cfg.c_model;
    if (cfg.heads == 0 || C % cfg.heads != 0) throw ConfigError("dit.heads must divide dit.c_model");
    if (cfg.blocks == 0) throw ConfigError("dit.blocks must be positive");
    const double pos_std = 0.3;
    in_target = nn::Linear(cfg.c_target, C, rng);
    if (cfg.has_semantics()) {
        in_sem = nn::Linear(cfg.c_sem, C, rng);
        sem_pos_t = nn::Embedding(cfg.sem_max_t, C, rng, pos_std);
        sem_pos_hw = nn::Embedding(cfg.sem_h * cfg.sem_w, C, rng, pos_std);
    }
    kind = nn::Embedding(3, C, rng, pos_std);
    pos_t = nn::Embedding(cfg.max_t, C, rng, pos_std);
    pos_hw = nn::Embedding(cfg.grid_h * cfg.grid_w, C, rng, pos_std);
    cond_shape = nn::Embedding(cfg.vocab.shapes, C, rng, 0.5);
    cond_color = nn::Embedding(cfg.vocab.colors, C, rng, 0.5);
    cond_background = nn::Embedding(cfg.vocab.backgrounds, C, rng, 0.5);
    cond_motion = nn::Embedding(cfg.vocab.motions, C, rng, 0.5);
    cond_cont = nn::Linear(4, C, rng, 0.5);
    null_cond = Tensor::randn({1, C}, rng, 0.5, true);
    temb1 = nn::Linear(cfg.temb_dim, C, rng);
    temb2 = nn::Linear(C, C, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        DitBlock blk;
        blk.norm1 = Tensor::full({C}, 1.0, true);
        blk.norm2 = Tensor::full({C}, 1.0, true);
        blk.mod1 = nn::Linear(C, C, rng, 0.0);
        blk.mod2 = nn::Linear(C, C, rng, 0.0);
        blk.wq = nn::Linear(C, C, rng, 1.0, false);
        blk.wk = nn::Linear(C, C, rng, 1.0, false);
        blk.wv = nn::Linear(C, C, rng, 1.0, false);
        blk.wo = nn::Linear(C, C, rng, 0.5);
        blk.up = nn::Linear(C, cfg.mlp_ratio * C, rng);
        blk.down = nn::Linear(cfg.mlp_ratio * C, C, rng, 0.5);
        blocks.push_back(std::move(blk));
    }
    norm_out = Tensor::full({C}, 1.0, true);
    mod_out = nn::Linear(C, C, rng, 0.0);
    head = nn::Linear(C, cfg.c_target, rng, 0.0);
}

ParamList DitParams::params() const {
    ParamList out;
    in_target.collect(out, "in_target");
    if (cfg.has_semantics()) {
        in_sem.collect(out, "in_sem");
        sem_pos_t.collect(out, "sem_pos_t");
        sem_pos_hw.collect(out, "sem_pos_hw");
    }
    kind.collect(out, "kind");
    pos_t.collect(out, "pos_t");
    pos_hw.collect(out, "pos_hw");
    cond_shape.collect(out, "cond_shape");
    cond_color.collect(out, "cond_color");
    cond_background.collect(out, "cond_background");
    cond_motion.collect(out, "cond_motion");
    cond_cont.collect(out, "cond_cont");
    out.push_back({"null_cond", null_cond});
    temb1.collect(out, "temb1");
    temb2.collect(out, "temb2");
    for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(out, "block" + std::to_string(b));
    out.push_back({"norm_out", norm_out});
    mod_out.collect(out, "mod_out");
    head.collect(out, "head");
    return out;
}

ParamList DitParams::semantic_embedder_params() const {
    ParamList out;
    if (!cfg.has_semantics()) return out;
    in_sem.collect(out, "in_sem");
    sem_pos_t.collect(out, "sem_pos_t");
    sem_pos_hw.collect(out, "sem_pos_hw");
    return out;
}

std::vector<double> timestep_features(double t, std::size_t dim) {
    std::vector<double> f(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(1000.0, -static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(half, 1)));
        f[i] = std::sin(1000.0 * t * freq);
        f[half + i] = std::cos(1000.0 * t * freq);
    }
    return f;
}

Tensor condition_tokens(const synth::FactorSpec *cond, const DitParams &p) {
    if (!cond) return p.null_cond;
    const auto &c = *cond;
    const Tensor cont({1, 4}, {2.0 * c.velocity[0], 2.0 * c.velocity[1], c.start[0] / p.cfg.frame_w - 0.5,
                               c.start[1] / p.cfg.frame_h - 0.5});
    return add(add(add(p.cond_shape({c.shape_id}), p.cond_color({c.color})),
                   add(p.cond_background({c.background_id}), p.cond_motion({static_cast<std::size_t>(c.motion)}))),
               p.cond_cont(cont));
}

namespace {

void check_finite(const Tensor &x, std::size_t layer) {
    for (double v : x.data()) {
        if (!std::isfinite(v)) throw NumericError("dit_forward: non-finite activation after layer " + std::to_string(layer));
    }
}

std::vector<std::size_t> kind_rows(const TokenSequence &seq, std::size_t begin, std::size_t end) {
    std::vector<std::size_t> out;
    for (std::size_t i = begin; i < end; ++i) out.push_back(static_cast<std::size_t>(seq.tokens[i].kind));
    return out;
}

}  // namespace

Tensor dit_forward(const TokenSequence &seq, const Tensor &z_t, const Tensor &z_sem, const Tensor &cond, double t,
                   const DitParams &p, const std::vector<AttentionMask> &masks) {
    const auto &cfg = p.cfg;
    const std::size_t L = seq.size();
    if (masks.size() != cfg.blocks) {
        throw DimensionError("dit_forward: " + std::to_string(masks.size()) + " masks for " +
                             std::to_string(cfg.blocks) + " blocks");
    }
    for (const auto &m : masks) {
        if (m.queries() != L || m.keys() != L) throw DimensionError("dit_forward: mask shape does not match sequence length");
    }
    if (z_t.rank() != 2 || z_t.rows() != seq.n_target || z_t.cols() != cfg.c_target) {
        throw DimensionError("dit_forward: target tokens " + shape_str(z_t.shape()) + " vs sequence with " +
                             std::to_string(seq.n_target) + " targets of width " + std::to_string(cfg.c_target));
    }
    if (cond.rank() != 2 || cond.rows() != seq.n_cond) throw DimensionError("dit_forward: condition row count mismatch");

    std::vector<Tensor> parts;
    parts.push_back(add(cond, p.kind(kind_rows(seq, 0, seq.n_cond))));
    if (seq.n_sem > 0) {
        if (!cfg.has_semantics()) throw ConfigError("dit_forward: semantic tokens given to a model without semantic inputs");
        if (!z_sem.defined() || z_sem.rows() != seq.n_sem || z_sem.cols() != cfg.c_sem) {
            throw DimensionError("dit_forward: semantic tokens do not match the sequence");
        }
        std::vector<std::size_t> ts, hws;
        for (std::size_t i = seq.sem_offset(); i < seq.target_offset(); ++i) {
            const auto &pos = seq.tokens[i];
            if (pos.t >= cfg.sem_max_t || pos.h >= cfg.sem_h || pos.w >= cfg.sem_w) {
                throw DimensionError("dit_forward: semantic position outside the learned table");
            }
            ts.push_back(pos.t);
            hws.push_back(pos.h * cfg.sem_w + pos.w);
        }
        parts.push_back(add(add(p.in_sem(z_sem), p.kind(kind_rows(seq, seq.sem_offset(), seq.target_offset()))),
                            add(p.sem_pos_t(ts), p.sem_pos_hw(hws))));
    }
    {
        std::vector<std::size_t> ts, hws;
        for (std::size_t i = seq.target_offset(); i < L; ++i) {
            const auto &pos = seq.tokens[i];
            if (pos.t >= cfg.max_t || pos.h >= cfg.grid_h || pos.w >= cfg.grid_w) {
                throw DimensionError("dit_forward: target position (" + std::to_string(pos.t) + "," +
                                     std::to_string(pos.h) + "," + std::to_string(pos.w) +
                                     ") outside the learned table");
            }
            ts.push_back(pos.t);
            hws.push_back(pos.h * cfg.grid_w + pos.w);
        }
        parts.push_back(add(add(p.in_target(z_t), p.kind(kind_rows(seq, seq.target_offset(), L))),
                            add(p.pos_t(ts), p.pos_hw(hws))));
    }
    Tensor x = concat_rows(parts);

    const Tensor tf({1, cfg.temb_dim}, timestep_features(t, cfg.temb_dim));
    const Tensor temb = silu(p.temb2(silu(p.temb1(tf))));
    const auto scale_of = [&](const nn::Linear &mod) { return add_scalar(mod(temb), 1.0).reshape({cfg.c_model}); };

    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const auto &b = p.blocks[l];
        const Tensor h = rms_norm(x, b.norm1, scale_of(b.mod1), cfg.norm_eps);
        x = add(x, b.wo(multi_head_attention(b.wq(h), b.wk(h), b.wv(h), cfg.heads, masks[l])));
        const Tensor h2 = rms_norm(x, b.norm2, scale_of(b.mod2), cfg.norm_eps);
        x = add(x, b.down(silu(b.up(h2))));
        check_finite(x, l);
    }
    const Tensor target = slice_rows(x, seq.target_offset(), L);
    return p.head(rms_norm(target, p.norm_out, scale_of(p.mod_out), cfg.norm_eps));
}

}  // namespace semgen::dit
