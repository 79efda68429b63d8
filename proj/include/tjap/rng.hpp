#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tjap {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept {
    return mix64(seed ^ mix64(value + 0x632be59bd9b4e019ULL));
}

template <class... Rest>
constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value, Rest... rest) noexcept {
    return hash_combine(hash_combine(seed, value), static_cast<std::uint64_t>(rest)...);
}

/// FNV-1a, stable across platforms (std::hash is not).
constexpr std::uint64_t hash_string(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Stream tags so independent consumers of one scenario seed never overlap.
enum class Stream : std::uint64_t {
    TargetParams = 1,
    ShiftPattern = 2,
    Contexts = 3,
    TargetChoice = 4,
    SourceAction = 5,
    SourceChoice = 6,
    Policy = 7,
};

inline Rng make_stream(std::uint64_t seed, Stream tag, std::uint64_t a = 0, std::uint64_t b = 0) {
    return Rng(hash_combine(seed, static_cast<std::uint64_t>(tag), a, b));
}

/// Uniform double in [0, 1) from the top 53 bits. Unlike
/// std::uniform_real_distribution this is identical across standard libraries.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace tjap
