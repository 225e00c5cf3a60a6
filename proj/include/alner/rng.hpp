#ifndef ALNER_RNG_HPP
#define ALNER_RNG_HPP

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

/**
 * @file rng.hpp
 *
 * @brief Portable seeded random number generation.
 *
 * The standard distributions are implementation-defined, so every draw that
 * feeds an experiment goes through this wrapper instead.
 * Only the 64-bit Mersenne Twister engine (whose output is fully specified) is used underneath.
 */

namespace alner {

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n), unbiased by rejection.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n <= 1) {
            return 0;
        }
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
        std::uint64_t draw;
        do {
            draw = engine_();
        } while (draw >= limit);
        return draw % n;
    }

    /// Standard normal via Marsaglia's polar method.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double factor = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * factor;
        has_spare_ = true;
        return u * factor;
    }

    template<typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    /// Serialized engine state, used for checkpointing sessions.
    std::string state() const {
        std::ostringstream out;
        out << engine_ << ' ' << has_spare_ << ' ';
        out.precision(17);
        out << spare_;
        return out.str();
    }

    void restore(const std::string& serialized) {
        std::istringstream in(serialized);
        in >> engine_ >> has_spare_ >> spare_;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0;
};

/// Derive an independent stream seed from a base seed and a salt.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}

#endif
