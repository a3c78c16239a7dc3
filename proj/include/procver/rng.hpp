#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace procver {

// Deterministic random source. The engine is mt19937_64 (bit-exact across
// platforms by the standard); the distributions are implemented here instead
// of <random>'s, whose outputs are implementation-defined. Streams for
// independent entities are derived from (seed, label) so results do not
// depend on evaluation order or worker count.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform();                         // [0, 1)
    double uniform(double lo, double hi);     // [lo, hi)
    std::uint64_t uniform_int(std::uint64_t n); // [0, n)
    int uniform_int(int lo, int hi);          // [lo, hi] inclusive
    double normal();                          // standard normal, Box-Muller
    double normal(double mu, double sigma);

    // Independent child stream keyed by a label such as "video/t01.p2.v03".
    Rng derive(std::string_view label) const;

    // Full state round-trip, used by checkpoints to resume exactly.
    std::string serialize() const;
    static Rng deserialize(const std::string& text);

    bool operator==(const Rng& other) const;

private:
    Rng() = default;

    std::mt19937_64 engine_;
    std::uint64_t seed_ = 0;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

// SplitMix64 finalizer; also used to combine seeds with label hashes.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t hash_label(std::string_view label);

} // namespace procver
