#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

#include "nblora/matrix.hpp"

namespace nblora {

/// SplitMix64, used only to expand a 64-bit seed into generator state.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// xoshiro256** seeded by SplitMix64.
///
/// Every random draw in the project goes through this type so that
/// experiment artifacts are a pure function of the seed:
///   uniform()  = (next() >> 11) * 2^-53, in [0, 1)
///   gaussian() = Box-Muller cosine branch on two consecutive uniforms
///                u1, u2: sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
class Prng {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Prng(std::uint64_t seed) noexcept {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  /// Independent stream for job `index` of a run seeded with `seed`. The seed
  /// is hashed before the index is added so that (s, i + 1) and (s + 1, i)
  /// do not share a stream.
  static constexpr Prng derive(std::uint64_t seed,
                               std::uint64_t index) noexcept {
    return Prng(SplitMix64(SplitMix64(seed).next() + index).next());
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }
  constexpr result_type operator()() noexcept { return next_u64(); }

  constexpr std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  constexpr double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double gaussian() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double gaussian(double mean, double stddev) noexcept {
    return mean + stddev * gaussian();
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) noexcept {
    auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  /// rows x cols matrix, row-major fill, entries N(0, stddev^2).
  Matrix gaussian_matrix(std::size_t rows, std::size_t cols,
                         double stddev = 1.0) {
    Matrix m(rows, cols);
    for (double& x : m.values()) x = stddev * gaussian();
    return m;
  }

  /// rows x cols matrix, row-major fill, entries U[0, 1).
  Matrix uniform_matrix(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& x : m.values()) x = uniform();
    return m;
  }

  Vector gaussian_vector(std::size_t n, double stddev = 1.0) {
    Vector v(n);
    for (double& x : v) x = stddev * gaussian();
    return v;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4]{};
};

}  // namespace nblora
