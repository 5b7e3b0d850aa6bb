#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace xlf {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded 64-bit hash over raw bytes. FNV-1a body with a splitmix64 finalizer;
/// depends only on the byte sequence, never on platform or run.
inline constexpr std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed = 0) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL ^ splitmix64(seed);
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(h);
}

/// 16 hex digits of stable_hash; used for config/classifier fingerprints.
std::string hex_digest(std::string_view bytes, std::uint64_t seed = 0);

}  // namespace xlf
