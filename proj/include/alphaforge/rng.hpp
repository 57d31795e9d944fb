#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace alphaforge {

inline std::uint64_t SplitMix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic PRNG with hand-rolled distributions. std's engines are
// portable but its distributions are not, and bit-identical replay across
// runs is a hard requirement for mining logs and pool files.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) {
      word = SplitMix64(sm);
    }
  }

  // Derives an independent stream for (seed, a, b); used for per-episode
  // streams so results do not depend on rollout scheduling.
  static Rng Substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t sm = seed;
    std::uint64_t mixed = SplitMix64(sm) ^ (a * 0x9e3779b97f4a7c15ULL);
    sm = mixed;
    mixed = SplitMix64(sm) ^ (b * 0xc2b2ae3d27d4eb4fULL);
    return Rng(mixed);
  }

  std::uint64_t NextU64() {
    const std::uint64_t result = Rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = Rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double NextDouble() {
    return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t NextIndex(std::uint64_t n) {
    return n == 0 ? 0 : NextU64() % n;
  }

  double NextNormal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = NextDouble();
    double u2 = NextDouble();
    while (u1 <= 0.0) {
      u1 = NextDouble();
    }
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  // Samples an index with probability weights[i] / sum(weights).
  std::size_t NextCategorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
      total += w;
    }
    double u = NextDouble() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) {
        return i;
      }
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  template <typename T>
  void Shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(NextIndex(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static std::uint64_t Rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4] = {};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace alphaforge
