#include "semgen/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "semgen/errors.hpp"
#include "semgen/io.hpp"

namespace semgen {

namespace {
constexpr const char *kMagic = "SEMGEN-CKPT 1";
}

const StoredTensor *Checkpoint::find(const std::string &name) const {
    for (const auto &t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void Checkpoint::add_params(const ParamList &params, const std::string &prefix) {
    for (const auto &p : params) {
        const auto d = p.tensor.data();
        tensors.push_back({prefix + p.name, p.tensor.shape(), {d.begin(), d.end()}});
    }
}

void Checkpoint::load_params(ParamList &params, const std::string &prefix) const {
    for (auto &p : params) {
        const auto *t = find(prefix + p.name);
        if (!t) throw ConfigError("checkpoint has no tensor '" + prefix + p.name + "'");
        if (t->shape != p.tensor.shape()) {
            throw ConfigError("checkpoint tensor '" + t->name + "' has shape " + shape_str(t->shape) +
                              ", model expects " + shape_str(p.tensor.shape()));
        }
        std::copy(t->values.begin(), t->values.end(), p.tensor.mutable_data().begin());
    }
}

void Checkpoint::add_adam(const ParamList &params, const AdamState &state, const std::string &prefix) {
    meta[prefix + "adam_step"] = state.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Shape &s = params[i].tensor.shape();
        tensors.push_back({prefix + "adam.m." + params[i].name, s, state.m[i]});
        tensors.push_back({prefix + "adam.v." + params[i].name, s, state.v[i]});
    }
}

AdamState Checkpoint::load_adam(const ParamList &params, const std::string &prefix) const {
    AdamState st = AdamState::zeros_like(params);
    st.step = meta.at(prefix + "adam_step").get<std::size_t>();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto *m = find(prefix + "adam.m." + params[i].name);
        const auto *v = find(prefix + "adam.v." + params[i].name);
        if (!m || !v || m->values.size() != st.m[i].size() || v->values.size() != st.v[i].size()) {
            throw ConfigError("checkpoint optimizer state missing or mismatched for '" + params[i].name + "'");
        }
        st.m[i] = m->values;
        st.v[i] = v->values;
    }
    return st;
}

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
    nlohmann::json header{{"meta", ckpt.meta}, {"tensors", nlohmann::json::array()}};
    for (const auto &t : ckpt.tensors) {
        if (shape_numel(t.shape) != t.values.size()) {
            throw InternalError("tensor '" + t.name + "' size disagrees with its shape");
        }
        header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
    }
    const std::string text = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write-then-rename so an interrupted save never leaves a torn checkpoint.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw ConfigError("cannot write checkpoint " + path.string());
        os << kMagic << '\n' << text.size() << '\n' << text;
        for (const auto &t : ckpt.tensors) io::write_f32_le(os, t.values);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DependencyError("missing checkpoint " + path.string());
    std::string magic, len_line;
    std::getline(is, magic);
    std::getline(is, len_line);
    if (magic != kMagic) throw ConfigError(path.string() + " is not a semgen checkpoint");
    std::string text(std::stoul(len_line), '\0');
    is.read(text.data(), static_cast<std::streamsize>(text.size()));
    const auto header = nlohmann::json::parse(text);
    Checkpoint ckpt;
    ckpt.meta = header.at("meta");
    for (const auto &e : header.at("tensors")) {
        StoredTensor t;
        t.name = e.at("name").get<std::string>();
        t.shape = e.at("shape").get<Shape>();
        t.values = io::read_f32_le(is, shape_numel(t.shape));
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

}  // namespace semgen
