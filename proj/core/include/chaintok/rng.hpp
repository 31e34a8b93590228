/**
 * Counter-based splittable random number generator.
 *
 * Every stochastic call site in the library takes an explicit Rng stream so
 * an experiment replays exactly from (seed, stream name). Streams are derived
 * by mixing the parent key with a stream tag; draws advance only the local
 * counter, so derived streams never interfere with each other.
 */
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace chaintok {

class Rng {
public:
    Rng() = default;
    explicit Rng(uint64_t seed) : key_(mix(seed, 0x9e3779b97f4a7c15ull)) {}

    /// Independent stream keyed by an integer tag.
    Rng derive(uint64_t tag) const { return Rng(key_, mix(key_, tag)); }
    /// Independent stream keyed by a name, e.g. rng.derive("rotation").
    Rng derive(std::string_view name) const { return derive(fnv1a(name)); }

    uint64_t next_u64() { return mix(key_, counter_++); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi);
    /// Standard normal via Box-Muller (no state cached; two draws per call).
    double normal();
    std::vector<float> normal_vec(size_t n);

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

private:
    Rng(uint64_t, uint64_t derived_key) : key_(derived_key) {}

    static uint64_t mix(uint64_t key, uint64_t ctr);
    static uint64_t fnv1a(std::string_view s);

    uint64_t key_ = 0x853c49e6748fea9bull;
    uint64_t counter_ = 0;
};

}  // namespace chaintok
