#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace capspike {

// splitmix64 output function. Used both as the stream generator step and as
// a stateless mixer for counter-based draws.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// Stateless draw keyed by up to three counters; identical inputs reproduce
// identical outputs regardless of evaluation order or thread count.
inline std::uint64_t counter_draw(std::uint64_t seed, std::uint64_t a,
                                  std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ (0xA24BAED4963EE407ull * (a + 1)));
    h = mix64(h ^ (0x9FB21C651E98DF25ull * (b + 1)));
    h = mix64(h ^ (0xD6E8FEB86659FD93ull * (c + 1)));
    return h;
}

// float in [0,1) from the top 24 bits.
inline float u64_to_unit_float(std::uint64_t x) {
    return static_cast<float>(x >> 40) * 0x1p-24f;
}

inline double u64_to_unit_double(std::uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1p-53;
}

// Seeded sequential stream (splitmix64). Distributions are hand-rolled so
// results do not depend on the standard library implementation.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0)
        : state_(mix64(seed) ^ mix64(stream ^ 0x6A09E667F3BCC909ull)) {}

    RandomStream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0)
        : RandomStream(seed, hash_tag(tag) ^ (0x9E3779B97F4A7C15ull * index)) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    float uniform() { return u64_to_unit_float(next_u64()); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    double uniform_double() { return u64_to_unit_double(next_u64()); }

    // Box-Muller; second value cached.
    float normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1p-53;
        double u2 = u64_to_unit_double(next_u64());
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 6.283185307179586476925286766559 * u2;
        cached_ = static_cast<float>(r * std::sin(t));
        have_cached_ = true;
        return static_cast<float>(r * std::cos(t));
    }

    float normal(float mean, float stddev) { return mean + stddev * normal(); }

    // Integer in [0, n). Multiply-shift; bias is < 2^-32 per draw.
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

private:
    std::uint64_t state_;
    float cached_ = 0.0f;
    bool have_cached_ = false;
};

// Deterministic Fisher-Yates.
template <typename Vec>
void seeded_shuffle(Vec& v, RandomStream& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace capspike
