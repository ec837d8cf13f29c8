#pragma once

#include <cmath>
#include <cstdint>

namespace heta {

// Deterministic, platform-independent RNG. All randomness in the project flows
// through this so that fixed seeds give byte-identical artifacts.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // Warm up so nearby seeds decorrelate.
        next_u64();
        next_u64();
    }

    // splitmix64 step.
    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller (single draw per sample pair, cached).
    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = next_uniform();
        double u2 = next_uniform();
        while (u1 <= 0.0) u1 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    // +1 or -1 with equal probability.
    double next_rademacher() { return (next_u64() & 1ull) ? 1.0 : -1.0; }

  private:
    uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

// Stable seed derivation for independent substreams: combine a base seed with
// a purpose tag and indices so distinct uses never share a stream.
inline uint64_t derive_seed(uint64_t base, uint64_t tag, uint64_t a = 0, uint64_t b = 0) {
    uint64_t z = base;
    auto mix = [&z](uint64_t v) {
        z ^= v + 0x9e3779b97f4a7c15ull + (z << 6) + (z >> 2);
        z *= 0xff51afd7ed558ccdull;
        z ^= z >> 33;
    };
    mix(tag);
    mix(a);
    mix(b);
    return z;
}

// Purpose tags for derive_seed.
namespace seed_tag {
constexpr uint64_t kInit = 0x494e4954;        // model weight init
constexpr uint64_t kHutchinson = 0x48555443;  // curvature Rademacher probes
constexpr uint64_t kRange = 0x524e4746;       // low-rank range-finder probes
constexpr uint64_t kCorpus = 0x434f5250;      // corpus generation
constexpr uint64_t kNoise = 0x4e4f4953;       // sensitivity metric noise
constexpr uint64_t kSubset = 0x53554253;      // theory-check subset sampling
constexpr uint64_t kDecode = 0x4445434f;      // decoding sweep sampling
constexpr uint64_t kTrain = 0x5452414e;       // training shuffles
constexpr uint64_t kMisc = 0x4d495343;
}  // namespace seed_tag

}  // namespace heta
