#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>

namespace nrx {

// splitmix64; used to derive independent child seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return mix_seed(master ^ mix_seed(stream));
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed = 1) : seed_(seed), eng_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Independent substream; deterministic in (this->seed, stream).
    Rng child(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return mean + stddev * std::normal_distribution<double>(0.0, 1.0)(eng_);
    }

    // CN(0, var): total complex variance var, var/2 per real dimension.
    std::complex<double> cnormal(double var = 1.0) {
        const double s = std::sqrt(var * 0.5);
        const double re = normal(0.0, s);
        const double im = normal(0.0, s);
        return {re, im};
    }

    int bit() { return static_cast<int>(eng_() & 1u); }

    std::uint64_t uint(std::uint64_t n) {  // uniform in [0, n)
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_);
    }

    std::mt19937_64& engine() { return eng_; }

  private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
};

}  // namespace nrx
