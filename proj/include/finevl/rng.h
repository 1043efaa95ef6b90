#ifndef FINEVL_RNG_H_
#define FINEVL_RNG_H_

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace finevl {

// SplitMix64 finalizer. Used to derive independent stream seeds from
// (seed, ordinal) pairs so per-item randomness does not depend on the order
// items are processed in.
constexpr uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr uint64_t DeriveSeed(uint64_t seed, uint64_t ordinal) {
  return Mix64(Mix64(seed) ^ (ordinal + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(Mix64(seed)) {}

  // Uniform integer in [0, n). n must be positive.
  size_t Below(size_t n) {
    return std::uniform_int_distribution<size_t>(0, n - 1)(engine_);
  }

  // Uniform real in [0, 1).
  double Uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double Normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  bool Bernoulli(double p) { return Uniform() < p; }

  template <typename T>
  void Shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[Below(i)]);
    }
  }

  uint64_t Next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace finevl

#endif  // FINEVL_RNG_H_
