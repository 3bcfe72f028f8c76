#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace tbe {

/// Derives an independent seed for a named sub-stream ("corpus", "blur",
/// "mining", "init", ...) plus optional counters (stage, epoch, step).
/// Re-seeding one stream never perturbs another, and a training step's
/// randomness depends only on (seed, stream, counters), which is what makes
/// checkpoint/resume bit-exact.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                          std::initializer_list<std::uint64_t> counters = {});

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream,
                                std::initializer_list<std::uint64_t> counters = {}) {
    return std::mt19937_64(derive_seed(seed, stream, counters));
}

}  // namespace tbe
