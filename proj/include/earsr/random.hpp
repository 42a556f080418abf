#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace earsr {

// Seeded generator with platform-independent uniform/normal draws. Streams
// are derived from a tuple of integers so independent consumers (weight init,
// data order, dropout masks, per-pass inference) never share state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::initializer_list<std::uint64_t> key) : engine_(mix(key)) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  static std::uint64_t mix(std::initializer_list<std::uint64_t> key) {
    std::uint64_t h = 0x9E3779B97F4A7C15ull;
    for (std::uint64_t k : key) {
      h ^= splitmix(k + 0x632BE59BD9B4E019ull + (h << 6) + (h >> 2));
      h = splitmix(h);
    }
    return h;
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace earsr
