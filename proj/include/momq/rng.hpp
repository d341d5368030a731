#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace momq {

// FNV-1a over raw bytes. Used for seed derivation and snapshot hashing.
uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull);
uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull);

// Deterministic RNG. All distributions are hand-rolled on top of the raw
// 64-bit stream so results are identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    double uniform();                              // [0, 1)
    double gaussian();                             // N(0, 1), Box-Muller
    int64_t uniform_int(int64_t lo, int64_t hi);   // inclusive range

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i)));
            std::swap(v[i], v[j]);
        }
    }

    // Independent substream; label keeps sibling streams decorrelated.
    Rng fork(std::string_view label);

private:
    uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace momq
