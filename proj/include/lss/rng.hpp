#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lss {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Stable 64-bit hash of a seed and a sequence of stream identifiers. Child
/// seeds depend only on their path, never on execution order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = splitmix64(seed);
    for (auto p : path) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
    return h;
}

// Stream tags for derive_seed.
enum class Stream : std::uint64_t {
    data = 1,
    proxy = 2,
    split = 3,
    partition = 4,
    init = 5,
    warmup = 6,
    round = 7,
    batches = 8,
    coeffs = 9,
    analysis = 10,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream s, std::initializer_list<std::uint64_t> rest = {}) {
    std::uint64_t h = derive_seed(seed, {static_cast<std::uint64_t>(s)});
    for (auto p : rest) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
    return h;
}

}  // namespace lss
