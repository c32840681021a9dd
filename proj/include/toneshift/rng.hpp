#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace toneshift {

uint64_t splitmix64(uint64_t x);

// Seeded generator whose outputs are identical on every standard library.
// std::mt19937_64 is fully specified by the standard; the distributions are
// not, so bounded integers, uniforms and normals are derived here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  uint64_t seed() const { return seed_; }
  uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n). n must be positive.
  uint64_t uniform_index(uint64_t n);
  // Uniform double in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double normal();
  bool bernoulli(double p) { return uniform01() < p; }

  template <class T>
  void shuffle(std::span<T> items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent stream derived from this generator's seed.
  Rng fork(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1))));
  }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace toneshift
