#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace attmetnet {

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard and
// the distributions below are hand-rolled, so a fixed seed reproduces the
// same stream on any platform/compiler. Streams for independent consumers
// (epoch, sample index, ...) are derived via splitmix64 mixing, never by
// sharing a generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Derive an independent stream from a seed and a path of indices,
    // e.g. Rng::derive(seed, {epoch, index}).
    static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t s = mix(seed);
        for (std::uint64_t p : path) s = mix(s ^ mix(p + 0x9e3779b97f4a7c15ULL));
        return Rng(s);
    }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0,n). Fixed-point multiply keeps the mapping
    // platform-independent.
    int uniform_int(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(gen_()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
    }

    // Standard normal via Box-Muller (polar-free form, deterministic).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace attmetnet
