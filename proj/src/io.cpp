#include "semgen/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "semgen/errors.hpp"
#include "semgen/hash.hpp"

namespace semgen::io {

namespace {

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
}

}  // namespace

void write_f32_le(std::ostream &os, std::span<const double> values) {
    std::vector<std::uint32_t> buf(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        buf[i] = to_le(bits);
    }
    os.write(reinterpret_cast<const char *>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)));
}

std::vector<double> read_f32_le(std::istream &is, std::size_t count) {
    std::vector<std::uint32_t> buf(count);
    is.read(reinterpret_cast<char *>(buf.data()),
            static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
    if (static_cast<std::size_t>(is.gcount()) != count * sizeof(std::uint32_t)) {
        throw ConfigError("truncated float32 blob: expected " + std::to_string(count) + " values");
    }
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = to_le(buf[i]);
        float f;
        std::memcpy(&f, &bits, sizeof f);
        out[i] = f;
    }
    return out;
}

void write_text(const std::filesystem::path &path, const std::string &text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + path.string());
    os << text;
}

std::string read_text(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DependencyError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::uint64_t file_hash(const std::filesystem::path &path) {
    const std::string bytes = read_text(path);
    Fnv1a h;
    h.update(bytes);
    return h.digest();
}

void round_to_f32(std::span<double> values) {
    for (auto &v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace semgen::io
