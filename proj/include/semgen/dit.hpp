#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "semgen/grid.hpp"
#include "semgen/nn.hpp"
#include "semgen/synthdata.hpp"

namespace semgen::dit {

enum class TokenKind : std::size_t { kCondition = 0, kSemantic = 1, kTarget = 2 };

struct TokenPos {
    TokenKind kind = TokenKind::kTarget;
    std::size_t t = 0, h = 0, w = 0;
    // Latent-time coordinate used by windowed layouts. Condition tokens have
    // none (they are global); semantic tokens sit at the center of the
    // latent-time span they summarize.
    std::optional<double> time;
};

// [condition] ++ [semantic] ++ [target], each grid in raster order
// (t-major, then h, then w).
struct TokenSequence {
    std::vector<TokenPos> tokens;
    std::size_t n_cond = 0;
    std::size_t n_sem = 0;
    std::size_t n_target = 0;
    std::size_t sem_offset() const { return n_cond; }
    std::size_t target_offset() const { return n_cond + n_sem; }
    std::size_t size() const { return tokens.size(); }
    std::size_t kind_count(TokenKind k) const;
};

// Builds the layout for a target grid of (t, h, w) tokens and an optional
// semantic grid. Target time of token (t, ., .) is t; a semantic token at
// time s covers target times [s r, (s + 1) r) with r = T_target / T_sem.
// Duplicate positions within a kind are an InternalError.
TokenSequence build_sequence(std::size_t t, std::size_t h, std::size_t w, const TokenGrid *sem,
                             std::size_t cond_tokens = 1);
TokenSequence build_sequence(const TokenGrid &z_t, const TokenGrid *z_sem, std::size_t cond_tokens = 1);

enum class LayoutMode { kFull, kSwinInterleaved };
LayoutMode parse_layout(const std::string &s);
std::string layout_name(LayoutMode m);

struct AttentionLayout {
    LayoutMode mode = LayoutMode::kFull;
    std::size_t window = 4;  // T_w in target-time units
    void validate() const;
    std::size_t shift(std::size_t layer) const { return layer % 2 == 1 ? window / 2 : 0; }
};

// full: every pair allowed. swin_interleaved: window(time) =
// floor((time - shift) / T_w) with shift = T_w/2 on odd layers; pairs with a
// condition token always allowed, semantic-semantic always allowed, every
// other pair allowed iff both share a window.
AttentionMask build_mask(const TokenSequence &seq, const AttentionLayout &layout, std::size_t layer);
std::vector<AttentionMask> build_masks(const TokenSequence &seq, const AttentionLayout &layout, std::size_t layers);

struct DitConfig {
    std::size_t c_model = 128;
    std::size_t blocks = 6;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t temb_dim = 32;
    double norm_eps = 1e-6;
    std::size_t c_target = 8;  // velocity / target token width
    std::size_t c_sem = 0;     // 0: model takes no semantic tokens
    // Largest grids the learned position tables cover.
    std::size_t max_t = 64, grid_h = 4, grid_w = 4;
    std::size_t sem_max_t = 16, sem_h = 2, sem_w = 2;
    synth::Vocabulary vocab;
    double frame_w = 32, frame_h = 32;  // for normalizing the start position

    bool has_semantics() const { return c_sem > 0; }
    nlohmann::json to_json() const;
    static DitConfig from_json(const nlohmann::json &j);
};

struct DitBlock {
    Tensor norm1, norm2;
    nn::Linear mod1, mod2;  // timestep -> per-channel scale offsets (zero init)
    nn::Linear wq, wk, wv, wo, up, down;
    void collect(ParamList &out, const std::string &prefix) const;
};

struct DitParams {
    DitConfig cfg;
    nn::Linear in_target;
    nn::Linear in_sem;  // absent without semantics
    nn::Embedding kind;
    nn::Embedding pos_t, pos_hw, sem_pos_t, sem_pos_hw;
    // Factor condition: summed lookups plus a projection of the continuous
    // fields; `null_cond` replaces it under condition dropout.
    nn::Embedding cond_shape, cond_color, cond_background, cond_motion;
    nn::Linear cond_cont;
    Tensor null_cond;
    nn::Linear temb1, temb2;
    std::vector<DitBlock> blocks;
    Tensor norm_out;
    nn::Linear mod_out;
    nn::Linear head;  // zero init

    DitParams() = default;
    DitParams(const DitConfig &cfg, Rng &rng);
    ParamList params() const;
    ParamList semantic_embedder_params() const;
    std::uint64_t hash() const { return param_hash(params()); }
};

// Sinusoidal features of t in [0, 1].
std::vector<double> timestep_features(double t, std::size_t dim);

// Condition token rows [cond_tokens, c_model]; nullptr selects the null token.
Tensor condition_tokens(const synth::FactorSpec *cond, const DitParams &p);

// Velocity rows for the target tokens [n_target, c_target]. `z_t` is
// [n_target, c_target], `z_sem` [n_sem, c_sem] (undefined when absent).
// masks: one per block. A non-finite activation raises NumericError naming
// the layer.
Tensor dit_forward(const TokenSequence &seq, const Tensor &z_t, const Tensor &z_sem, const Tensor &cond, double t,
                   const DitParams &p, const std::vector<AttentionMask> &masks);

}  // namespace semgen::dit
