#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace semgen {

// xoshiro256** seeded through splitmix64. The stream is fully determined by
// the 64-bit seed; normals use the Box-Muller transform with one cached
// variate, so the cache is part of the serialized state.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    // Independent child stream, e.g. one per clip or per sample.
    Rng split(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }

    std::string serialize() const;
    static Rng deserialize(const std::string &text);

   private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
    bool has_cached_ = false;
    double cached_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t &state);

}  // namespace semgen
