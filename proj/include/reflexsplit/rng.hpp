#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace reflexsplit {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic RNG wrapper. std::uniform_real_distribution is
// implementation-defined, so all floating draws go through the
// 53-bit construction below; results are identical across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi_inclusive) {
        const auto span = static_cast<std::uint64_t>(hi_inclusive - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    // Box-Muller; stateless (two uniforms per draw) to keep streams simple.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Independent child stream; deterministic in (parent seed, id).
    Rng fork(std::uint64_t id) const {
        return Rng(splitmix64(base_seed_mix() ^ splitmix64(id + 1)));
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        return splitmix64(splitmix64(a) ^ (b + 0x9E3779B97F4A7C15ULL));
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
        return mix(mix(a, b), c);
    }

private:
    std::uint64_t base_seed_mix() const {
        // mt19937_64 copies cheaply enough for fork(); hash the next output
        // of a copy so fork() does not advance this stream.
        std::mt19937_64 copy = engine_;
        return copy();
    }

    std::mt19937_64 engine_;
};

} // namespace reflexsplit
