#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace jetlab {

/// FNV-1a 64-bit; used for config/content identity, not security.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline std::string content_hash(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

} // namespace jetlab
