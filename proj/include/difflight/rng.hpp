#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "difflight/common.hpp"

namespace difflight {

// Single seeded PRNG service. Every random draw in the project flows through
// an Rng obtained from one root seed; independent streams are derived with
// fork() so that parallel work (episodes, experiment cells) stays bit-exact
// regardless of scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix(seed, 0x5df1a9c3b7e62f11ull)) {}

  // Derived stream: deterministic function of (this stream's seed, tag).
  // Forking does not consume draws from this stream.
  Rng fork(std::uint64_t tag) const { return Rng(mix(seed_, tag)); }
  Rng fork(std::string_view tag) const { return fork(fnv1a64(tag.data(), tag.size())); }
  Rng fork(std::uint64_t a, std::uint64_t b) const { return fork(mix(a, b)); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  int poisson(double mean) { return std::poisson_distribution<int>(mean)(engine_); }

  // Uniform integer in [0, n).
  int uniform_int(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine_); }
  std::int64_t uniform_int64(std::int64_t n) {
    return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_);
  }

  template <typename S>
  Vec<S> normal_vec(std::int64_t n) {
    Vec<S> v(n);
    for (std::int64_t i = 0; i < n; ++i) v[i] = static_cast<S>(normal());
    return v;
  }

  template <typename S>
  Vec<S> uniform_vec(std::int64_t n, double lo, double hi) {
    Vec<S> v(n);
    for (std::int64_t i = 0; i < n; ++i) v[i] = static_cast<S>(uniform(lo, hi));
    return v;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_int(static_cast<int>(i))]);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix-style avalanche of the pair
    std::uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t seed_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace difflight
