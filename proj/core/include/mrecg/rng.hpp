#ifndef MRECG_RNG_HPP_
#define MRECG_RNG_HPP_

#include <cmath>
#include <cstdint>

namespace mrecg {

// Counter-based deterministic stream. Every consumer derives its stream from
// (seed, stream ids) so results are reproducible regardless of call order
// across modules and iterations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix(seed + 0x9e3779b97f4a7c15ull)) {}

  // Derive an independent substream (e.g. per module, per iteration).
  Rng fork(uint64_t id) const {
    Rng r(0);
    r.state_ = splitmix(state_ ^ splitmix(id + 0xbf58476d1ce4e5b9ull));
    return r;
  }
  Rng fork(uint64_t a, uint64_t b) const { return fork(a).fork(b); }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return splitmix(state_);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Box-Muller; independent of any library distribution implementation so
  // streams are bit-stable across toolchains.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = next_double();
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  bool next_bernoulli(double p) { return next_double() < p; }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    // Modulo bias is irrelevant at the ranges used here (n << 2^64).
    return next_u64() % n;
  }

 private:
  static uint64_t splitmix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mrecg

#endif  // MRECG_RNG_HPP_
