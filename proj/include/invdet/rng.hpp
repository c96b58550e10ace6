// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace invdet {

/// 64-bit FNV-1a. Used for content hashes, cache keys and rng substream
/// derivation; all artifact hashes in this project are FNV-1a hex strings.
struct Fnv1a64 {
    uint64_t state = 0xcbf29ce484222325ull;

    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            state ^= p[i];
            state *= 0x100000001b3ull;
        }
    }
    void update_str(std::string_view s) { update(s.data(), s.size()); }
    void update_u64(uint64_t v) { update(&v, sizeof(v)); }
    uint64_t digest() const { return state; }
};

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64_str(std::string_view s);
std::string hash_hex(uint64_t h);

/// Deterministic random stream. Distributions are hand-rolled on top of
/// mt19937_64 so the byte-level sequence does not depend on the standard
/// library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

    uint64_t seed() const { return seed_; }
    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    float uniform_range(float lo, float hi) { return lo + static_cast<float>(uniform()) * (hi - lo); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(eng_() % static_cast<uint64_t>(hi - lo + 1));
    }

    double normal();
    float normalf() { return static_cast<float>(normal()); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(eng_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Independent child stream; (name, index) pairs give reproducible
    /// per-task streams regardless of scheduling order.
    Rng substream(std::string_view name, uint64_t index = 0) const {
        Fnv1a64 h;
        h.update_u64(seed_);
        h.update_str(name);
        h.update_u64(index);
        return Rng(h.digest());
    }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
};

}  // namespace invdet
