#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace iclnav {

/// Deterministic 64-bit generator (splitmix64 core). Used everywhere instead
/// of <random> engines+distributions so that streams are bit-identical across
/// standard libraries and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Lemire multiply-shift; n must be > 0.
    int uniform_below(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
    }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Fresh seed for a child stream (per-episode env seeds and the like).
    uint64_t fork_seed() { return next_u64(); }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

/// FNV-1a 64-bit hash; used for config hashes, checkpoint checksums and
/// per-token embedding seeds.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xCBF29CE484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

}  // namespace iclnav
