#pragma once

#include <cstdint>
#include <string_view>

namespace roivqa {

/// splitmix64 output function. Bijective 64-bit mixer.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// FNV-1a over raw bytes.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Derives one stream key from a run seed and a per-item string id.
/// Items keyed this way draw identical values no matter which worker or
/// in which order they are processed.
inline std::uint64_t item_key(std::uint64_t seed, std::string_view id) {
    return mix64(fnv1a64(id) ^ mix64(seed + 0x9e3779b97f4a7c15ull));
}

/// splitmix64 generator: a single 64-bit state advanced by a fixed odd
/// constant, output mixed by mix64. The entire algorithm fits in a dozen
/// lines, so seeded results reproduce bit-for-bit on any platform or in
/// any reimplementation.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix64(state_);
    }

    /// Unbiased integer in [0, n) by rejection; n must be >= 1.
    std::uint64_t next_below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t reject = (0 - n) % n;  // 2^64 mod n
        for (;;) {
            const std::uint64_t r = next();
            if (r >= reject) return r % n;
        }
    }

    /// Uniform integer in [lo, hi], both inclusive.
    std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(
                        next_below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    bool next_bool() { return (next() & 1ull) != 0; }

private:
    std::uint64_t state_;
};

/// Fisher-Yates shuffle driven by a SplitMix64 stream.
template <typename Vec>
void shuffle(Vec& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        using std::swap;
        swap(v[i - 1], v[j]);
    }
}

}  // namespace roivqa
