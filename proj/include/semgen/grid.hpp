#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "semgen/tensor.hpp"

namespace semgen {

// A (T x H x W) grid of C-dimensional tokens, raster order t-major, then h,
// then w. Used for latent grids, raw semantic grids and compressed semantic
// grids alike.
struct TokenGrid {
    std::size_t t = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t channels = 0;
    std::vector<double> values;

    TokenGrid() = default;
    TokenGrid(std::size_t t, std::size_t h, std::size_t w, std::size_t c)
        : t(t), h(h), w(w), channels(c), values(t * h * w * c, 0.0) {}

    std::size_t tokens() const { return t * h * w; }
    std::size_t index(std::size_t ti, std::size_t hi, std::size_t wi) const { return (ti * h + hi) * w + wi; }
    double &at(std::size_t token, std::size_t c) { return values[token * channels + c]; }
    double at(std::size_t token, std::size_t c) const { return values[token * channels + c]; }
    bool same_dims(const TokenGrid &o) const {
        return t == o.t && h == o.h && w == o.w && channels == o.channels;
    }
    std::string dims_str() const;

    // [tokens, channels] tensor view (copy).
    Tensor tensor(bool requires_grad = false) const;
    static TokenGrid from_tensor(const Tensor &x, std::size_t t, std::size_t h, std::size_t w);

    bool operator==(const TokenGrid &) const = default;
};

// Per-grid cache file: header line "t h w c" then float32 LE values.
void save_grid(const std::filesystem::path &path, const TokenGrid &g);
TokenGrid load_grid(const std::filesystem::path &path);

}  // namespace semgen
