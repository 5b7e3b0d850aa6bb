#include "xlf/hashing.hpp"

#include <cstdio>

namespace xlf {

std::string hex_digest(std::string_view bytes, std::uint64_t seed)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(stable_hash(bytes, seed)));
    return buf;
}

}  // namespace xlf
