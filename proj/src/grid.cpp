#include "semgen/grid.hpp"

#include <fstream>
#include <sstream>

#include "semgen/errors.hpp"
#include "semgen/io.hpp"

namespace semgen {

std::string TokenGrid::dims_str() const {
    std::ostringstream os;
    os << t << "x" << h << "x" << w << "x" << channels;
    return os.str();
}

Tensor TokenGrid::tensor(bool requires_grad) const {
    return Tensor({tokens(), channels}, values, requires_grad);
}

TokenGrid TokenGrid::from_tensor(const Tensor &x, std::size_t t, std::size_t h, std::size_t w) {
    if (x.rank() != 2 || x.rows() != t * h * w) {
        throw DimensionError("tensor " + shape_str(x.shape()) + " does not hold a " + std::to_string(t) + "x" +
                             std::to_string(h) + "x" + std::to_string(w) + " grid");
    }
    TokenGrid g(t, h, w, x.cols());
    const auto d = x.data();
    std::copy(d.begin(), d.end(), g.values.begin());
    return g;
}

void save_grid(const std::filesystem::path &path, const TokenGrid &g) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + path.string());
    os << g.t << ' ' << g.h << ' ' << g.w << ' ' << g.channels << '\n';
    io::write_f32_le(os, g.values);
}

TokenGrid load_grid(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DependencyError("missing grid file " + path.string());
    std::string header;
    std::getline(is, header);
    std::istringstream hs(header);
    std::size_t t = 0, h = 0, w = 0, c = 0;
    if (!(hs >> t >> h >> w >> c)) throw ConfigError("malformed grid header in " + path.string());
    TokenGrid g(t, h, w, c);
    g.values = io::read_f32_le(is, g.values.size());
    return g;
}

}  // namespace semgen
