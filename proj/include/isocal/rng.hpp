#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace isocal {

// Deterministic RNG. The engine (mt19937_64) has a standard-specified output
// sequence; the distribution transforms live here because the std::
// distributions are implementation-defined and would break byte-for-byte
// reproducibility of generated datasets across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1); safe to feed into logit().
    double uniform_open() {
        return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. Consumes two engine draws per call.
    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n). Fixed-point multiply keeps it engine-exact.
    std::size_t below(std::size_t n) {
        const unsigned __int128 wide =
            static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
        return static_cast<std::size_t>(wide >> 64);
    }

    // Fisher-Yates with explicit index draws.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

// Derives an independent stream seed from (seed, stream_index). SplitMix64
// finalizer; used for counter-based per-session substreams in the simulators.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace isocal
