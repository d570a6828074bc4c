#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace semgen::io {

// float32 little-endian, independent of host byte order.
void write_f32_le(std::ostream &os, std::span<const double> values);
std::vector<double> read_f32_le(std::istream &is, std::size_t count);

void write_text(const std::filesystem::path &path, const std::string &text);
std::string read_text(const std::filesystem::path &path);

// Raw file digest (FNV-1a 64).
std::uint64_t file_hash(const std::filesystem::path &path);

// Rounds every value through float32, the on-disk precision.
void round_to_f32(std::span<double> values);

}  // namespace semgen::io
