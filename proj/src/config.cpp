#include "semgen/config.hpp"

#include <sstream>

#include "semgen/errors.hpp"
#include "semgen/io.hpp"

namespace semgen {

using nlohmann::json;

const std::vector<KeySpec> &Config::registry() {
    static const std::vector<KeySpec> keys = {
        {"corpus.num_clips", 96, "number of clips"},
        {"corpus.frames", 16, "frames per short clip (F)"},
        {"corpus.frames_long", 64, "frames per long clip (F_long)"},
        {"corpus.height", 16, "frame height H"},
        {"corpus.width", 16, "frame width W"},
        {"corpus.fps", 24.0, "clip frame rate"},
        {"corpus.semantic_fps", 6.0, "frame rate fed to the semantic encoder"},
        {"corpus.texture_amplitude", 0.05, "static texture noise amplitude"},
        {"corpus.sprite_scale", 0.25, "sprite half-extent / frame height"},
        {"corpus.min_speed", 0.25, "minimum sprite speed (px/frame)"},
        {"corpus.max_speed", 0.75, "maximum sprite speed (px/frame)"},
        {"corpus.seed", 0, "corpus seed"},

        {"ae.f_t", 2, "temporal downsample factor"},
        {"ae.f_s", 4, "spatial downsample factor"},
        {"ae.c_z", 8, "latent channels"},
        {"ae.hidden", 128, "hidden width of the per-token MLPs"},
        {"ae.blocks", 2, "residual blocks per side"},
        {"ae.beta", 1e-4, "KL weight"},
        {"ae.steps", 8000, "training steps"},
        {"ae.batch", 2, "clips per step"},
        {"ae.lr", 3e-3, "learning rate"},
        {"ae.seed", 11, "init / sampling seed"},

        {"sem.patch", 8, "semantic patch size p_s"},
        {"sem.d", 32, "raw semantic width d"},
        {"sem.blocks", 1, "encoder transformer blocks"},
        {"sem.heads", 2, "encoder attention heads"},
        {"sem.steps", 8000, "encoder pretraining steps"},
        {"sem.batch", 4, "clips per encoder step"},
        {"sem.lr", 5e-3, "encoder learning rate"},
        {"sem.pretrain_clips", 2000, "clips in the encoder pretraining corpus (rendered with its own seed)"},
        {"sem.pretrain_seed", 5, "seed of the encoder pretraining corpus"},
        {"sem.seed", 21, "encoder seed"},
        {"sem.probe_seed", 31, "seed of the independently trained factor probe"},
        {"sem.d_c", 8, "compressed semantic width d_c"},
        {"sem.kl_weight", 1e-3, "compressor KL weight (lambda_KL)"},
        {"sem.logvar_min", -10.0, "compressor logvar clamp floor"},
        {"sem.logvar_max", 10.0, "compressor logvar clamp ceiling"},
        {"sem.noise_level", 0.1, "inference noise level on z_sem"},
        {"sem.token_ratio", 16, "required latent/semantic token ratio R"},

        {"dit.c_model", 64, "transformer width"},
        {"dit.blocks", 2, "transformer blocks"},
        {"dit.heads", 4, "attention heads"},
        {"dit.mlp_ratio", 4, "MLP hidden = mlp_ratio * c_model"},
        {"dit.layout", "full", "attention layout: full | swin_interleaved"},
        {"dit.window", 4, "swin window T_w in latent-time units (even)"},
        {"dit.temb_dim", 32, "sinusoidal timestep features"},
        {"dit.cond_dropout", 0.1, "probability of replacing the condition by the null token"},
        {"dit.norm_eps", 1e-6, "RMSNorm epsilon"},

        {"train.steps", 3000, "steps per generator stage"},
        {"train.batch", 4, "examples per step"},
        {"train.lr", 6e-3, "learning rate"},
        {"train.long_batch", 1, "examples per step in long mode (one long clip carries F_long/F short clips of tokens)"},
        {"train.clip_norm", 1.0, "global gradient-norm clip (0 disables)"},
        {"train.adam_eps", 1e-8, "Adam epsilon"},
        {"train.final_lr_ratio", 0.05, "cosine learning-rate decay target, as a fraction of the base rate (all stages)"},
        {"train.ckpt_every", 250, "checkpoint interval in steps"},
        {"train.seed", 0, "init / data-order / noise seed"},

        {"sampler.steps", 50, "Euler steps N"},
        {"sampler.seed", 0, "sampling seed"},

        {"eval.fraction", 0.15, "drift segment fraction"},
        {"eval.clips", 16, "long clips per system in the drift experiment (K), and reference clips per seed"},
        {"eval.seeds", json::array({0, 1, 2}), "seeds for majority trend gates"},
        {"eval.sweep", json::array({32, 8, 2}), "d_c values for the compression ablation"},
        {"eval.early_fraction", 0.25, "early checkpoint as a fraction of train.steps"},
        {"eval.coherence_threshold", 0.8, "probe confidence that counts a clip as a coherent shape"},
        {"eval.coherence_pass", 0.5, "fraction of coherent clips for a system to pass the coherent-shape probe"},
        {"eval.probe_clips", 64, "generated clips per factor_match / bg_consistency evaluation"},

        {"run.name", "default", "run directory name under the artifact root"},
        {"run.root", "runs", "artifact root (overridden by SEMGEN_ARTIFACTS)"},
    };
    return keys;
}

std::string Config::help_text() {
    std::ostringstream os;
    for (const auto &k : registry()) {
        os << "  " << k.key << " = " << k.default_value.dump() << "\n      " << k.help << "\n";
    }
    return os.str();
}

Config::Config() {
    for (const auto &k : registry()) values_[k.key] = k.default_value;
}

namespace {

bool same_kind(const json &a, const json &b) {
    if (a.is_number() && b.is_number()) {
        // Integer keys stay integral; real keys accept integers.
        return !(a.is_number_integer() && !b.is_number_integer());
    }
    return a.type() == b.type();
}

void flatten(const json &j, const std::string &prefix, std::vector<std::pair<std::string, json>> &out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) {
            flatten(*it, key, out);
        } else {
            out.emplace_back(key, *it);
        }
    }
}

}  // namespace

void Config::set(const std::string &key, const json &value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    if (!same_kind(it->second, value)) {
        throw ConfigError("config key '" + key + "' expects " + std::string(it->second.type_name()) +
                          ", got " + value.dump());
    }
    it->second = value;
}

void Config::merge(const json &j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    std::vector<std::pair<std::string, json>> flat;
    flatten(j, "", flat);
    for (const auto &[k, v] : flat) set(k, v);
}

void Config::merge_file(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " not found");
    json j;
    try {
        j = json::parse(io::read_text(path));
    } catch (const json::parse_error &e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    merge(j);
}

void Config::apply_override(const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) v = text;
    set(key, v);
}

const json &Config::raw(const std::string &key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw InternalError("unregistered config key '" + key + "'");
    return it->second;
}

std::int64_t Config::integer(const std::string &key) const { return raw(key).get<std::int64_t>(); }

std::size_t Config::size(const std::string &key) const {
    const auto v = integer(key);
    if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

double Config::real(const std::string &key) const { return raw(key).get<double>(); }
bool Config::flag(const std::string &key) const { return raw(key).get<bool>(); }
std::string Config::str(const std::string &key) const { return raw(key).get<std::string>(); }
std::uint64_t Config::seed(const std::string &key) const { return static_cast<std::uint64_t>(integer(key)); }

std::vector<std::int64_t> Config::int_list(const std::string &key) const {
    const auto &v = raw(key);
    std::vector<std::int64_t> out;
    for (const auto &e : v) {
        if (!e.is_number_integer()) throw ConfigError("config key '" + key + "' must be a list of integers");
        out.push_back(e.get<std::int64_t>());
    }
    return out;
}

json Config::snapshot() const {
    json j = json::object();
    for (const auto &[k, v] : values_) j[k] = v;
    return j;
}

json Config::subset(const std::string &prefix) const {
    json j = json::object();
    for (const auto &[k, v] : values_) {
        if (k.rfind(prefix + ".", 0) == 0) j[k] = v;
    }
    return j;
}

}  // namespace semgen
