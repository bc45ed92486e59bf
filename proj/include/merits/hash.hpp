#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace merits {

// 64-bit FNV-1a. Used for transcript cache keys and checkpoint content
// hashes; any single-byte change flips the digest.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(s.data(), s.size());
}

std::string hex64(std::uint64_t value);

}  // namespace merits
