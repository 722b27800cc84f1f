#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace twinforge {

using Rng = std::mt19937_64;

/// Independent generator for the named sub-stream of a run seed. Streams with
/// different names (or seeds) do not share state, so each consumer of
/// randomness is reproducible on its own.
inline Rng substream(std::uint64_t seed, std::string_view name)
{
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return Rng(seq);
}

inline double uniform01(Rng& rng)
{
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

} // namespace twinforge
