#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace horolab {

// 64-bit FNV-1a, rendered as 16 hex digits.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t h);
inline std::string hash_string(std::string_view data) { return hex64(fnv1a(data)); }

// Shortest round-trip decimal form of a double.
std::string fmt_double(double v);

// Directory for cached artifacts: $HOROLAB_CACHE_DIR, else ".horolab-cache".
std::string default_cache_dir();

}  // namespace horolab
