#include "semgen/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "semgen/errors.hpp"
#include "semgen/hash.hpp"
#include "semgen/io.hpp"

namespace semgen::synth {

namespace {

constexpr int kSupersample = 4;

bool inside_sprite(SpriteShape shape, double dx, double dy, double r) {
    switch (shape) {
        case SpriteShape::kCircle:
            return dx * dx + dy * dy <= r * r;
        case SpriteShape::kSquare:
            return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
        case SpriteShape::kTriangle:
            return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r);
    }
    return false;
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

// Shuffled-block assignment of `n` categories over `count` clips.
std::vector<std::size_t> stratified(std::size_t count, std::size_t n, Rng rng) {
    std::vector<std::size_t> out;
    out.reserve(count);
    std::vector<std::size_t> perm(n);
    while (out.size() < count) {
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        for (std::size_t i = 0; i < n && out.size() < count; ++i) out.push_back(perm[i]);
    }
    return out;
}

}  // namespace

const char *motion_name(Motion m) {
    switch (m) {
        case Motion::kLinear:
            return "linear";
        case Motion::kBounce:
            return "bounce";
        case Motion::kOrbit:
            return "orbit";
    }
    return "?";
}

void CorpusConfig::validate() const {
    if (num_clips == 0) throw ConfigError("corpus.num_clips must be positive");
    if (frames == 0 || height == 0 || width == 0 || channels != 3) {
        throw ConfigError("corpus dimensions must be positive with 3 channels");
    }
    if (vocab.shapes == 0 || vocab.colors == 0 || vocab.backgrounds == 0 || vocab.motions == 0) {
        throw ConfigError("vocabulary too small for stratification: every factor needs >= 1 entry");
    }
    if (vocab.shapes > 3 || vocab.motions > 3 || vocab.colors > 4 || vocab.backgrounds > 4) {
        throw ConfigError("vocabulary exceeds the renderer's palette (3 shapes, 4 colors, 4 backgrounds, 3 motions)");
    }
    if (!(vocab.min_speed >= 0.0) || vocab.max_speed < vocab.min_speed) {
        throw ConfigError("corpus speed bounds must satisfy 0 <= min <= max");
    }
    if (!(fps > 0.0) || !(semantic_fps > 0.0) || semantic_fps > fps) {
        throw ConfigError("corpus frame rates must satisfy 0 < semantic_fps <= fps");
    }
    if (texture_amplitude < 0.0 || texture_amplitude > 0.5) {
        throw ConfigError("corpus.texture_amplitude must lie in [0, 0.5]");
    }
}

Video::Video(std::size_t f, std::size_t c, std::size_t h, std::size_t w, double fps)
    : frames(f), channels(c), height(h), width(w), fps(fps), pixels(f * c * h * w, 0.0) {}

Video Video::frame_range(std::size_t begin, std::size_t end) const {
    if (begin > end || end > frames) throw ValidationError("frame range out of bounds");
    Video out(end - begin, channels, height, width, fps);
    std::copy(pixels.begin() + static_cast<std::ptrdiff_t>(begin * frame_size()),
              pixels.begin() + static_cast<std::ptrdiff_t>(end * frame_size()), out.pixels.begin());
    return out;
}

Video Video::reversed() const {
    Video out(frames, channels, height, width, fps);
    for (std::size_t f = 0; f < frames; ++f) {
        std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(f * frame_size()), frame_size(),
                    out.pixels.begin() + static_cast<std::ptrdiff_t>((frames - 1 - f) * frame_size()));
    }
    return out;
}

std::vector<Vec2> sprite_trajectory(const FactorSpec &spec, const CorpusConfig &cfg,
                                    std::size_t frames) {
    std::vector<Vec2> out(frames);
    const double xmax = static_cast<double>(cfg.width - 1);
    const double ymax = static_cast<double>(cfg.height - 1);
    switch (spec.motion) {
        case Motion::kLinear:
            for (std::size_t k = 0; k < frames; ++k) {
                out[k] = {spec.start[0] + spec.velocity[0] * static_cast<double>(k),
                          spec.start[1] + spec.velocity[1] * static_cast<double>(k)};
            }
            break;
        case Motion::kBounce: {
            Vec2 p = spec.start, v = spec.velocity;
            const Vec2 hi{xmax, ymax};
            for (std::size_t k = 0; k < frames; ++k) {
                out[k] = p;
                for (int a = 0; a < 2; ++a) {
                    p[a] += v[a];
                    // Reflect until inside; repeated reflection covers |v| > extent.
                    while (p[a] < 0.0 || p[a] > hi[a]) {
                        if (p[a] > hi[a]) p[a] = 2.0 * hi[a] - p[a];
                        if (p[a] < 0.0) p[a] = -p[a];
                        v[a] = -v[a];
                    }
                }
            }
            break;
        }
        case Motion::kOrbit: {
            const double cx = xmax / 2.0, cy = ymax / 2.0;
            const double dx = spec.start[0] - cx, dy = spec.start[1] - cy;
            const double radius = std::hypot(dx, dy);
            const double speed = std::hypot(spec.velocity[0], spec.velocity[1]);
            const double omega =
                radius > 0.0 ? (spec.velocity[0] >= 0.0 ? 1.0 : -1.0) * speed / radius : 0.0;
            const double phase = std::atan2(dy, dx);
            for (std::size_t k = 0; k < frames; ++k) {
                const double a = phase + omega * static_cast<double>(k);
                out[k] = {cx + radius * std::cos(a), cy + radius * std::sin(a)};
            }
            break;
        }
    }
    return out;
}

std::array<double, 3> background_color(std::size_t background_id, double u, double v) {
    switch (background_id) {
        case 0:
            return {0.10, 0.12, 0.30};
        case 1:
            return {lerp(0.20, 0.55, v), lerp(0.20, 0.55, v), lerp(0.22, 0.58, v)};
        case 2:
            return {lerp(0.08, 0.30, u), lerp(0.35, 0.55, u), lerp(0.12, 0.22, u)};
        case 3:
            return {lerp(0.45, 0.25, 0.5 * (u + v)), lerp(0.25, 0.12, 0.5 * (u + v)),
                    lerp(0.20, 0.35, 0.5 * (u + v))};
        default:
            throw ValidationError("background_id " + std::to_string(background_id) + " out of range");
    }
}

std::array<double, 3> sprite_color(std::size_t color) {
    static constexpr std::array<std::array<double, 3>, 4> kPalette{{
        {0.95, 0.20, 0.20},
        {0.95, 0.90, 0.20},
        {0.20, 0.85, 0.95},
        {0.95, 0.95, 0.95},
    }};
    if (color >= kPalette.size()) throw ValidationError("color " + std::to_string(color) + " out of range");
    return kPalette[color];
}

Video render_clip(const FactorSpec &spec, const CorpusConfig &cfg, Rng &rng, std::size_t frames) {
    cfg.validate();
    if (frames == 0) frames = cfg.frames;
    const double xmax = static_cast<double>(cfg.width - 1), ymax = static_cast<double>(cfg.height - 1);
    if (!(spec.start[0] >= 0.0 && spec.start[0] <= xmax && spec.start[1] >= 0.0 && spec.start[1] <= ymax)) {
        throw ValidationError("start position (" + std::to_string(spec.start[0]) + ", " +
                              std::to_string(spec.start[1]) + ") lies outside the frame");
    }
    if (spec.shape_id >= cfg.vocab.shapes || spec.color >= cfg.vocab.colors ||
        spec.background_id >= cfg.vocab.backgrounds ||
        static_cast<std::size_t>(spec.motion) >= cfg.vocab.motions) {
        throw ValidationError("factor outside the configured vocabulary");
    }
    const std::size_t h = cfg.height, w = cfg.width, c = cfg.channels;
    std::vector<double> texture(c * h * w);
    for (auto &t : texture) t = rng.uniform(-cfg.texture_amplitude, cfg.texture_amplitude);

    std::vector<double> background(c * h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const auto bg = background_color(spec.background_id, w > 1 ? x / xmax : 0.0,
                                             h > 1 ? y / ymax : 0.0);
            for (std::size_t ch = 0; ch < c; ++ch) background[(ch * h + y) * w + x] = bg[ch];
        }
    }

    const auto traj = sprite_trajectory(spec, cfg, frames);
    const auto color = sprite_color(spec.color);
    const auto shape = static_cast<SpriteShape>(spec.shape_id);
    const double r = cfg.sprite_radius();
    Video out(frames, c, h, w, cfg.fps);
    for (std::size_t f = 0; f < frames; ++f) {
        const auto [cx, cy] = traj[f];
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double cover = 0.0;
                if (std::abs(static_cast<double>(x) - cx) <= r + 1.0 &&
                    std::abs(static_cast<double>(y) - cy) <= r + 1.0) {
                    int hits = 0;
                    for (int sy = 0; sy < kSupersample; ++sy) {
                        for (int sx = 0; sx < kSupersample; ++sx) {
                            const double px = static_cast<double>(x) + (sx + 0.5) / kSupersample - 0.5;
                            const double py = static_cast<double>(y) + (sy + 0.5) / kSupersample - 0.5;
                            hits += inside_sprite(shape, px - cx, py - cy, r) ? 1 : 0;
                        }
                    }
                    cover = hits / static_cast<double>(kSupersample * kSupersample);
                }
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t idx = (ch * h + y) * w + x;
                    const double v = background[idx] * (1.0 - cover) + color[ch] * cover + texture[idx];
                    out.at(f, ch, y, x) = std::clamp(v, 0.0, 1.0);
                }
            }
        }
    }
    return out;
}

std::vector<FactorSpec> draw_factors(const CorpusConfig &cfg) {
    cfg.validate();
    const Rng root(cfg.seed);
    const auto shapes = stratified(cfg.num_clips, cfg.vocab.shapes, root.split(1'000'001));
    const auto colors = stratified(cfg.num_clips, cfg.vocab.colors, root.split(1'000'002));
    const auto backgrounds = stratified(cfg.num_clips, cfg.vocab.backgrounds, root.split(1'000'003));
    const auto motions = stratified(cfg.num_clips, cfg.vocab.motions, root.split(1'000'004));
    const double xmax = static_cast<double>(cfg.width - 1), ymax = static_cast<double>(cfg.height - 1);
    const double margin = std::min(cfg.sprite_radius() + 1.0, 0.5 * std::min(xmax, ymax));

    std::vector<FactorSpec> out(cfg.num_clips);
    for (std::size_t i = 0; i < cfg.num_clips; ++i) {
        Rng rng = root.split(i).split(0);
        FactorSpec &s = out[i];
        s.shape_id = shapes[i];
        s.color = colors[i];
        s.background_id = backgrounds[i];
        s.motion = static_cast<Motion>(motions[i]);
        const double speed = rng.uniform(cfg.vocab.min_speed, cfg.vocab.max_speed);
        const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
        s.velocity = {speed * std::cos(heading), speed * std::sin(heading)};
        if (s.motion == Motion::kOrbit) {
            const double ring = rng.uniform(0.2, 0.3) * std::min(xmax, ymax);
            const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
            s.start = {xmax / 2.0 + ring * std::cos(angle), ymax / 2.0 + ring * std::sin(angle)};
        } else {
            s.start = {rng.uniform(margin, xmax - margin), rng.uniform(margin, ymax - margin)};
        }
    }
    return out;
}

std::vector<Clip> make_corpus(const CorpusConfig &cfg, bool long_mode) {
    const auto factors = draw_factors(cfg);
    const Rng root(cfg.seed);
    std::vector<Clip> clips;
    clips.reserve(factors.size());
    for (std::size_t i = 0; i < factors.size(); ++i) {
        Rng tex = root.split(i).split(1);
        clips.push_back({factors[i], render_clip(factors[i], cfg, tex, long_mode ? cfg.frames_long : cfg.frames)});
    }
    return clips;
}

std::size_t subsample_stride(double fps, double target_fps) {
    if (!(target_fps > 0.0) || target_fps > fps) {
        throw ValidationError("target fps " + std::to_string(target_fps) + " must lie in (0, " +
                              std::to_string(fps) + "]");
    }
    const double stride = std::round(fps / target_fps);
    if (stride < 1.0) throw ValidationError("subsample stride < 1");
    return static_cast<std::size_t>(stride);
}

Video subsample_frames(const Video &v, double target_fps) {
    const std::size_t stride = subsample_stride(v.fps, target_fps);
    const std::size_t n = (v.frames + stride - 1) / stride;
    Video out(n, v.channels, v.height, v.width, v.fps / static_cast<double>(stride));
    for (std::size_t k = 0; k < n; ++k) {
        std::copy_n(v.pixels.begin() + static_cast<std::ptrdiff_t>(k * stride * v.frame_size()),
                    v.frame_size(), out.pixels.begin() + static_cast<std::ptrdiff_t>(k * v.frame_size()));
    }
    return out;
}

// ------------------------------------------------------------- persistence

namespace {

nlohmann::json config_json(const CorpusConfig &cfg, bool long_mode) {
    return {{"num_clips", cfg.num_clips},
            {"frames", cfg.frames},
            {"frames_long", cfg.frames_long},
            {"height", cfg.height},
            {"width", cfg.width},
            {"channels", cfg.channels},
            {"fps", cfg.fps},
            {"semantic_fps", cfg.semantic_fps},
            {"texture_amplitude", cfg.texture_amplitude},
            {"sprite_scale", cfg.sprite_scale},
            {"seed", cfg.seed},
            {"long_mode", long_mode},
            {"vocab",
             {{"shapes", cfg.vocab.shapes},
              {"colors", cfg.vocab.colors},
              {"backgrounds", cfg.vocab.backgrounds},
              {"motions", cfg.vocab.motions},
              {"min_speed", cfg.vocab.min_speed},
              {"max_speed", cfg.vocab.max_speed}}}};
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void save_corpus(const std::filesystem::path &dir, const CorpusConfig &cfg,
                 const std::vector<Clip> &clips, bool long_mode) {
    std::filesystem::create_directories(dir);
    io::write_text(dir / "corpus.json", config_json(cfg, long_mode).dump(2) + "\n");
    std::ostringstream csv;
    csv << "idx,shape_id,color,vel_x,vel_y,start_x,start_y,background_id,motion_pattern\n";
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto &f = clips[i].factors;
        csv << i << ',' << f.shape_id << ',' << f.color << ',' << fmt_double(f.velocity[0]) << ','
            << fmt_double(f.velocity[1]) << ',' << fmt_double(f.start[0]) << ',' << fmt_double(f.start[1])
            << ',' << f.background_id << ',' << motion_name(f.motion) << '\n';
        std::ofstream os(dir / ("clip_" + std::to_string(i) + ".bin"), std::ios::binary);
        io::write_f32_le(os, clips[i].video.pixels);
    }
    io::write_text(dir / "factors.csv", csv.str());
}

LoadedCorpus load_corpus(const std::filesystem::path &dir) {
    if (!std::filesystem::exists(dir / "corpus.json")) {
        throw DependencyError("no corpus at " + dir.string() + " (run make-corpus first)");
    }
    LoadedCorpus out;
    const auto j = nlohmann::json::parse(io::read_text(dir / "corpus.json"));
    auto &cfg = out.cfg;
    cfg.num_clips = j.at("num_clips");
    cfg.frames = j.at("frames");
    cfg.frames_long = j.at("frames_long");
    cfg.height = j.at("height");
    cfg.width = j.at("width");
    cfg.channels = j.at("channels");
    cfg.fps = j.at("fps");
    cfg.semantic_fps = j.at("semantic_fps");
    cfg.texture_amplitude = j.at("texture_amplitude");
    cfg.sprite_scale = j.at("sprite_scale");
    cfg.seed = j.at("seed");
    out.long_mode = j.at("long_mode");
    const auto &v = j.at("vocab");
    cfg.vocab = {v.at("shapes"), v.at("colors"), v.at("backgrounds"), v.at("motions"), v.at("min_speed"),
                 v.at("max_speed")};

    std::istringstream csv(io::read_text(dir / "factors.csv"));
    std::string line;
    std::getline(csv, line);
    const std::size_t frames = out.long_mode ? cfg.frames_long : cfg.frames;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
        if (cells.size() != 9) throw ConfigError("malformed factors.csv row: " + line);
        Clip clip;
        const std::size_t idx = std::stoul(cells[0]);
        auto &f = clip.factors;
        f.shape_id = std::stoul(cells[1]);
        f.color = std::stoul(cells[2]);
        f.velocity = {std::stod(cells[3]), std::stod(cells[4])};
        f.start = {std::stod(cells[5]), std::stod(cells[6])};
        f.background_id = std::stoul(cells[7]);
        if (cells[8] == "linear") {
            f.motion = Motion::kLinear;
        } else if (cells[8] == "bounce") {
            f.motion = Motion::kBounce;
        } else if (cells[8] == "orbit") {
            f.motion = Motion::kOrbit;
        } else {
            throw ConfigError("unknown motion pattern '" + cells[8] + "'");
        }
        clip.video = Video(frames, cfg.channels, cfg.height, cfg.width, cfg.fps);
        std::ifstream is(dir / ("clip_" + std::to_string(idx) + ".bin"), std::ios::binary);
        if (!is) throw DependencyError("missing clip_" + std::to_string(idx) + ".bin");
        clip.video.pixels = io::read_f32_le(is, clip.video.pixels.size());
        out.clips.push_back(std::move(clip));
    }
    return out;
}

std::uint64_t corpus_hash(const std::vector<Clip> &clips) {
    Fnv1a h;
    for (const auto &c : clips) {
        const auto &f = c.factors;
        const std::size_t ids[4] = {f.shape_id, f.color, f.background_id, static_cast<std::size_t>(f.motion)};
        h.update(ids, sizeof ids);
        for (double d : {f.velocity[0], f.velocity[1], f.start[0], f.start[1]}) {
            const float q = static_cast<float>(d);
            h.update(&q, sizeof q);
        }
        for (double p : c.video.pixels) {
            const float q = static_cast<float>(p);
            h.update(&q, sizeof q);
        }
    }
    return h.digest();
}

}  // namespace semgen::synth
