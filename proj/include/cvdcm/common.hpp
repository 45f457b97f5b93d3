#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>

namespace cvdcm {

// Input/validation failures (bad files, schema violations, inconsistent
// datasets). CLI maps these to exit code 1; everything else to 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

// Canonical float formatting used by every text artifact (CSV, JSON):
// 17 significant digits, enough to round-trip a double exactly.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_double(double v, int precision) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return buf;
}

// FNV-1a over the raw bytes of a double range. Used for parameter-group
// freeze checks: a frozen group must checksum identically across phases.
inline std::uint64_t fnv1a_bytes(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

template <typename Container>
std::uint64_t checksum_doubles(const Container& c) {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : c) h = fnv1a_bytes(&v, sizeof(v), h);
    return h;
}

inline bool all_finite(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace cvdcm
