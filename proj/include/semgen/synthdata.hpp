#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semgen/rng.hpp"

namespace semgen::synth {

enum class SpriteShape : std::size_t { kCircle = 0, kSquare = 1, kTriangle = 2 };
enum class Motion : std::size_t { kLinear = 0, kBounce = 1, kOrbit = 2 };

const char *motion_name(Motion m);

using Vec2 = std::array<double, 2>;  // (x, y) in pixels

// Ground-truth generative factors of one clip. They stand in for a text
// prompt and double as labels for the semantic encoder.
struct FactorSpec {
    std::size_t shape_id = 0;
    std::size_t color = 0;
    Vec2 velocity{0.0, 0.0};  // pixels / frame
    Vec2 start{0.0, 0.0};     // sprite center at frame 0
    std::size_t background_id = 0;
    Motion motion = Motion::kLinear;

    bool operator==(const FactorSpec &) const = default;
};

struct Vocabulary {
    std::size_t shapes = 3;
    std::size_t colors = 4;
    std::size_t backgrounds = 4;
    std::size_t motions = 3;
    double min_speed = 0.25;
    double max_speed = 0.75;
};

struct CorpusConfig {
    std::size_t num_clips = 64;
    std::size_t frames = 16;
    std::size_t frames_long = 128;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 3;
    double fps = 24.0;
    // Frame rate fed to the semantic encoder; 4:1 below `fps` by default.
    double semantic_fps = 6.0;
    double texture_amplitude = 0.05;
    // Sprite half-extent as a fraction of the frame height.
    double sprite_scale = 0.2;
    std::uint64_t seed = 0;
    Vocabulary vocab;

    double sprite_radius() const { return sprite_scale * static_cast<double>(height); }
    void validate() const;
};

// F x C x H x W pixels in [0, 1], row-major.
struct Video {
    std::size_t frames = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    double fps = 0.0;
    std::vector<double> pixels;

    Video() = default;
    Video(std::size_t f, std::size_t c, std::size_t h, std::size_t w, double fps);

    std::size_t frame_size() const { return channels * height * width; }
    double &at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) {
        return pixels[((f * channels + c) * height + y) * width + x];
    }
    double at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[((f * channels + c) * height + y) * width + x];
    }
    Video frame_range(std::size_t begin, std::size_t end) const;
    Video reversed() const;
    bool operator==(const Video &) const = default;
};

struct Clip {
    FactorSpec factors;
    Video video;
};

// Sprite center per frame under the clip's motion pattern.
//  linear: start + k * velocity
//  bounce: per-frame step with reflection at the frame borders [0, W-1] x [0, H-1]
//  orbit:  circle about the frame center through `start`, angular velocity
//          |velocity| / radius, direction given by the sign of velocity.x
std::vector<Vec2> sprite_trajectory(const FactorSpec &spec, const CorpusConfig &cfg,
                                    std::size_t frames);

// Background color at a pixel for the given background id (no texture).
std::array<double, 3> background_color(std::size_t background_id, double u, double v);
std::array<double, 3> sprite_color(std::size_t color);

// Renders one clip. `frames == 0` means cfg.frames. Texture noise is a static
// per-pixel pattern drawn from `rng`, uniform in +-texture_amplitude.
Video render_clip(const FactorSpec &spec, const CorpusConfig &cfg, Rng &rng, std::size_t frames = 0);

// Draws the factors of every clip. Categorical factors are assigned in
// shuffled blocks so every vocabulary entry appears once num_clips reaches
// the vocabulary size.
std::vector<FactorSpec> draw_factors(const CorpusConfig &cfg);

// (cfg, seed) fully determine the corpus. `long_mode` renders frames_long.
std::vector<Clip> make_corpus(const CorpusConfig &cfg, bool long_mode = false);

// Uniform-stride temporal subsampling, stride = round(fps / target_fps);
// frame 0 is always kept.
Video subsample_frames(const Video &v, double target_fps);
std::size_t subsample_stride(double fps, double target_fps);

// ---- persistence ----
// <dir>/corpus.json, <dir>/clip_<idx>.bin (float32 LE frames), <dir>/factors.csv
void save_corpus(const std::filesystem::path &dir, const CorpusConfig &cfg,
                 const std::vector<Clip> &clips, bool long_mode = false);
struct LoadedCorpus {
    CorpusConfig cfg;
    bool long_mode = false;
    std::vector<Clip> clips;
};
LoadedCorpus load_corpus(const std::filesystem::path &dir);

// Digest over factors and quantized pixels; equal for byte-identical corpora.
std::uint64_t corpus_hash(const std::vector<Clip> &clips);

}  // namespace semgen::synth
