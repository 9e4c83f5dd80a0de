#include "horolab/io.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <system_error>

namespace horolab {

std::uint64_t fnv1a(std::string_view data, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char ch : data) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fmt_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    if (r.ec != std::errc()) return "nan";
    return std::string(buf, r.ptr);
}

std::string default_cache_dir() {
    if (const char* env = std::getenv("HOROLAB_CACHE_DIR"); env && *env) return env;
    return ".horolab-cache";
}

}  // namespace horolab
