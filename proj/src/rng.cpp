#include "semgen/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "semgen/errors.hpp"

namespace semgen {

std::uint64_t splitmix64(std::uint64_t &state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto &w : s_) w = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw ValidationError("Rng::below called with n=0");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

Rng Rng::split(std::uint64_t stream) const {
    std::uint64_t sm = seed_ ^ (0xd1b54a32d192ed03ULL * (stream + 1));
    return Rng(splitmix64(sm));
}

std::string Rng::serialize() const {
    std::ostringstream os;
    std::uint64_t cached_bits = 0;
    std::memcpy(&cached_bits, &cached_, sizeof cached_bits);
    os << seed_ << ' ' << s_[0] << ' ' << s_[1] << ' ' << s_[2] << ' ' << s_[3] << ' '
       << (has_cached_ ? 1 : 0) << ' ' << cached_bits;
    return os.str();
}

Rng Rng::deserialize(const std::string &text) {
    std::istringstream is(text);
    Rng r;
    int cached_flag = 0;
    std::uint64_t cached_bits = 0;
    is >> r.seed_ >> r.s_[0] >> r.s_[1] >> r.s_[2] >> r.s_[3] >> cached_flag >> cached_bits;
    if (!is) throw ConfigError("malformed rng state: '" + text + "'");
    r.has_cached_ = cached_flag != 0;
    std::memcpy(&r.cached_, &cached_bits, sizeof cached_bits);
    return r;
}

}  // namespace semgen
