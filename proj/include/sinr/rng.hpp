#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace sinr {

using Rng = std::mt19937_64;

/// Independent engine for a named purpose, derived from a master seed.
Rng derive_rng(std::uint64_t master_seed, std::uint64_t stream);

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n) by rejection; n must be positive.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Engine state as text (the standard stream representation), and back.
std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

/// 64-bit FNV-1a, used to key per-species streams by external id.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace sinr
