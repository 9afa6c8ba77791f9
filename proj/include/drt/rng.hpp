#pragma once

#include <cmath>
#include <cstdint>

namespace drt {

// Counter-free splitmix64 stream. Cheap to fork, bit-reproducible on every
// platform, and good enough statistically for initialization, Gumbel noise,
// masking, and sampling.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ^ kGolden) {
        // avoid the all-zero fixed point family near small seeds
        next_u64();
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform on the open interval (0,1).
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t n) {  // in [0, n)
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    // Standard normal via Box-Muller; second value cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    // Standard Gumbel(0,1): -log(-log(U)).
    double gumbel() { return -std::log(-std::log(uniform())); }

    // Derive an independent stream; forks of forks stay decorrelated because
    // each id passes through the splitmix finalizer.
    Rng fork(uint64_t stream_id) const {
        Rng r(0);
        r.state_ = mix(state_ ^ mix(stream_id + kGolden));
        r.have_cached_ = false;
        return r;
    }

  private:
    static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_ = 0;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace drt
