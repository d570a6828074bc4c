#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace semgen {

// FNV-1a, 64-bit. Used for freeze/fairness fingerprints, not for security.
class Fnv1a {
   public:
    Fnv1a() = default;
    explicit Fnv1a(std::uint64_t state) : state_(state) {}
    void update(const void *bytes, std::size_t n) {
        const auto *p = static_cast<const unsigned char *>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return state_; }

   private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);

}  // namespace semgen
