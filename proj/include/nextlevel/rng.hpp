#pragma once

// Deterministic random number generation. Everything seeded goes through
// this header so that identical seeds give identical results on every
// platform; no std::<distribution> is used anywhere (their outputs are not
// specified bit-exactly by the standard).

#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <utility>
#include <vector>

namespace nlm {

// splitmix64 finalizer; also the single mixing primitive behind seed
// derivation, the reference encoder, and the cache checksum lanes.
inline constexpr uint64_t mix64(uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// FNV-1a over bytes.
inline constexpr uint64_t hash_bytes(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// Fold extra stream tags into a base seed. Used to key independent RNG
// streams, e.g. derive_seed(seed, {epoch, batch_index}).
inline constexpr uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> tags) {
    uint64_t s = mix64(seed + 0x9e3779b97f4a7c15ull);
    for (uint64_t t : tags) s = mix64(s ^ mix64(t + 0x9e3779b97f4a7c15ull));
    return s;
}

// splitmix64 sequence generator.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix64(state_);
    }

    // Uniform in [0,1) with 53 random bits; exact IEEE arithmetic.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0,n). Lemire multiply-shift; the O(2^-64) bias is
    // irrelevant here and the mapping is fully deterministic.
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    size_t index(size_t n) { return static_cast<size_t>(below(n)); }

    // Approximate standard normal via the sum of 12 uniforms (Irwin-Hall,
    // mean 6, variance 1). Uses only exact IEEE add/mul, so the stream is
    // bit-identical everywhere, unlike transcendental-based samplers.
    double gaussian() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform01();
        return s - 6.0;
    }

    // Truncated normal: resample until |z| <= 2, then scale by sigma.
    double truncated_normal(double sigma) {
        double z = gaussian();
        while (z < -2.0 || z > 2.0) z = gaussian();
        return z * sigma;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

}  // namespace nlm
