#pragma once
#include <cmath>
#include <cstdint>
#include <string_view>

namespace nkd {

// SplitMix64 step. Fixed algorithm so streams are identical on every platform.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Seed-splitting scheme: every consumer of randomness derives its own stream
// from the master seed and a domain string, so adding a consumer never
// perturbs the others. derive_seed(master, "init/student"), etc.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view domain) {
    std::uint64_t s = master ^ fnv1a64(domain);
    return splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view domain, std::uint64_t index) {
    std::uint64_t s = master ^ fnv1a64(domain);
    s += 0x9E3779B97F4A7C15ULL * (index + 1);
    return splitmix64(s);
}

// Deterministic generator: SplitMix64 core, explicit float mapping.
// std::*_distribution is implementation-defined, so it is not used anywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0,1) with 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n) via 128-bit multiply-shift
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Box-Muller, one value per call (the spare is discarded for simplicity)
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

} // namespace nkd
