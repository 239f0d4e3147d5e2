#pragma once

#include <cmath>
#include <cstdint>

namespace lgnet {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent child seed, e.g. per-sample seeds from a dataset seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Counter-based generator: draw i is splitmix64(key + i * golden). The
/// integer stream is identical on every platform; real-valued draws are
/// built from it with explicit arithmetic (no std distributions).
class CounterRng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64-counter";

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : key_(derive_seed(seed, stream)) {}

  std::uint64_t next_u64() {
    return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * counter_++);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lgnet
