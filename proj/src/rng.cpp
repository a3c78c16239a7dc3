#include "procver/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "procver/errors.hpp"

namespace procver {

std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t hash_label(std::string_view label) {
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

Rng::Rng(std::uint64_t seed) : engine_(mix_seed(seed)), seed_(seed) {}

std::uint64_t Rng::next_u64() {
    return engine_();
}

double Rng::uniform() {
    // 53-bit mantissa construction, uniform on [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) {
        throw ConfigError("uniform_int: empty range");
    }
    // rejection sampling, unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return x % n;
}

int Rng::uniform_int(int lo, int hi) {
    if (hi < lo) {
        throw ConfigError("uniform_int: hi < lo");
    }
    const auto span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    return lo + static_cast<int>(uniform_int(span));
}

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double angle = uniform() * 2.0 * std::numbers::pi;
    const double radius = std::sqrt(-2.0 * std::log(1.0 - uniform()));
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

double Rng::normal(double mu, double sigma) {
    return mu + sigma * normal();
}

Rng Rng::derive(std::string_view label) const {
    return Rng(mix_seed(seed_ ^ hash_label(label)));
}

std::string Rng::serialize() const {
    std::ostringstream out;
    out << seed_ << ' ' << (has_cached_normal_ ? 1 : 0) << ' ';
    out.precision(17);
    out << cached_normal_ << ' ' << engine_;
    return out.str();
}

Rng Rng::deserialize(const std::string& text) {
    Rng r;
    std::istringstream in(text);
    int has_cached = 0;
    in >> r.seed_ >> has_cached >> r.cached_normal_ >> r.engine_;
    if (!in) {
        throw DataError("rng state: malformed serialization");
    }
    r.has_cached_normal_ = has_cached != 0;
    return r;
}

bool Rng::operator==(const Rng& other) const {
    return seed_ == other.seed_ && engine_ == other.engine_ &&
           has_cached_normal_ == other.has_cached_normal_ &&
           (!has_cached_normal_ || cached_normal_ == other.cached_normal_);
}

} // namespace procver
