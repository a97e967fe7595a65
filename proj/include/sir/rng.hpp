// Seeded, counting pseudo-random generator.
//
// All randomness in the project flows through this generator so that runs
// are reproducible from (seed, stream label) alone and so that a stream can
// be fast-forwarded to a saved position when training resumes from a
// checkpoint. std::mt19937 + std distributions are avoided on purpose: the
// distribution algorithms are implementation-defined, which would break
// cross-toolchain determinism.

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace sir {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // splitmix64 step
    std::uint64_t next_u64() {
        ++draws_;
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; always consumes exactly two draws so
    // the stream position stays a pure function of the call count
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    std::uint64_t draws() const { return draws_; }

    void skip(std::uint64_t n) {
        for (std::uint64_t i = 0; i < n; ++i) next_u64();
    }

    // derive an independent sub-stream seed from a label (FNV-1a over the
    // label folded into the parent seed)
    static std::uint64_t derive(std::uint64_t seed, std::string_view label) {
        std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
        for (char ch : label) {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
        h ^= seed * 0x9e3779b97f4a7c15ULL;
        return h ? h : 1;
    }

private:
    std::uint64_t state_;
    std::uint64_t draws_ = 0;
};

} // namespace sir
