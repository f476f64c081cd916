#pragma once

#include <cmath>
#include <cstdint>

namespace incline {

// Counter-based pseudo-random stream: draw(i) depends only on (seed, i), so
// parameter init and corpus generation are reproducible bit-for-bit no matter
// how callers interleave their draws.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Mix a stream tag into a seed so independent streams never collide.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream * 0x9e3779b97f4a7c15ull + 0x243f6a8885a308d3ull));
}

class CounterRng {
 public:
  explicit CounterRng(uint64_t seed) : seed_(seed) {}

  // uniform in (0, 1]: never returns 0 so log() below is safe
  double uniform() {
    uint64_t bits = splitmix64(seed_ + 0x632be59bd9b4e019ull * ++counter_);
    return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
  }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) {
    uint64_t bits = splitmix64(seed_ + 0x632be59bd9b4e019ull * ++counter_);
    return bits % n;
  }

  // standard normal via Box-Muller
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  uint64_t seed_;
  uint64_t counter_ = 0;
};

}  // namespace incline
