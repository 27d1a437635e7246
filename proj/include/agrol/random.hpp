#pragma once

#include <cstdint>
#include <random>

#include "agrol/numerics.hpp"

namespace agrol {

// SplitMix64 finalizer; used to derive independent per-stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seeded generator that counts every scalar it hands out, so samplers can
// assert exactly how much randomness they consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  double normal() {
    ++draws_;
    return normal_(engine_);
  }

  double uniform() {
    ++draws_;
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    ++draws_;
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  template <typename T>
  Tensor2<T> normal_tensor(std::size_t rows, std::size_t cols) {
    Tensor2<T> t(rows, cols);
    for (T& v : t.span()) {
      v = static_cast<T>(normal());
    }
    return t;
  }

  template <typename T>
  Tensor2<T> uniform_tensor(std::size_t rows, std::size_t cols, double lo,
                            double hi) {
    Tensor2<T> t(rows, cols);
    for (T& v : t.span()) {
      v = static_cast<T>(uniform(lo, hi));
    }
    return t;
  }

  [[nodiscard]] std::uint64_t draws() const noexcept { return draws_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uint64_t draws_ = 0;
};

} // namespace agrol
