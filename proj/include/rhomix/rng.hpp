#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace rhomix {

// splitmix64, used to derive independent stream seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t s = master ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b << 1);
}

// Deterministic random stream. mt19937_64 is fully specified by the standard
// and all variates below are generated from its raw output, so sequences are
// identical across platforms for a given seed.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed = 0) : gen_(seed) {}

    static RngStream substream(std::uint64_t master, std::uint64_t index) {
        return RngStream(derive_seed(master, index));
    }

    std::uint64_t raw() { return gen_(); }

    // uniform on [0,1) with 53-bit resolution
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // uniform on (0,1]
    double uniform01_open0() { return 1.0 - uniform01(); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; the second variate of each pair is cached.
    double normal() {
        if (have_cache_) {
            have_cache_ = false;
            return cache_;
        }
        double u1 = uniform01_open0();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cache_ = r * std::sin(a);
        have_cache_ = true;
        return r * std::cos(a);
    }

    double cauchy() {
        return std::tan(3.14159265358979323846 * (uniform01() - 0.5));
    }

    double laplace() {
        double u = uniform01_open0();
        return u < 0.5 ? std::log(2.0 * u) : -std::log(2.0 * (1.0 - u));
    }

    double exponential() { return -std::log(uniform01_open0()); }

    // index in [0, n)
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform01() * static_cast<double>(n)) % n;
    }

  private:
    std::mt19937_64 gen_;
    double cache_ = 0.0;
    bool have_cache_ = false;
};

}  // namespace rhomix
