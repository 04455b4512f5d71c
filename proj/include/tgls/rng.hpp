#pragma once

#include <cstdint>
#include <random>

namespace tgls {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to decorrelate derived seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Per-sample / per-phase seed derivation: streams are independent of the
// thread count, so parallel maps stay reproducible.
inline uint64_t derive_seed(uint64_t base, uint64_t phase, uint64_t index = 0) {
    return mix64(mix64(base ^ (phase * 0xd1342543de82ef95ULL)) ^ index);
}

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Uniform integer in [0, n).
inline size_t uniform_index(Rng& rng, size_t n) {
    return std::uniform_int_distribution<size_t>(0, n - 1)(rng);
}

}  // namespace tgls
