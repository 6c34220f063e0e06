#include <gtest/gtest.h>

#include <cmath>

#include "nblora/prng.hpp"

using nblora::Prng;
using nblora::SplitMix64;

// Golden values from an independent Python implementation of splitmix64
// seeding and xoshiro256**.
TEST(Prng, GoldenValuesSeedZero) {
  Prng rng(0);
  EXPECT_EQ(rng.next_u64(), 0x99ec5f36cb75f2b4ULL);
  EXPECT_EQ(rng.next_u64(), 0xbf6e1f784956452aULL);

  Prng u(0);
  EXPECT_EQ(u.uniform(), 0.6012629994179048);
  EXPECT_EQ(u.uniform(), 0.7477740925472398);

  Prng g(0);
  EXPECT_NEAR(g.gaussian(), -0.01896499060631051, 1e-15);

  Prng other(12345);
  EXPECT_EQ(other.uniform(), 0.7438081631565894);
}

TEST(Prng, SameSeedSameStream) {
  Prng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Prng, DerivedStreamsDiffer) {
  Prng a = Prng::derive(7, 0), b = Prng::derive(7, 1);
  EXPECT_NE(a.next_u64(), b.next_u64());
  Prng c = Prng::derive(7, 3);
  Prng d(SplitMix64(SplitMix64(7).next() + 3).next());
  EXPECT_EQ(c.next_u64(), d.next_u64());
}

TEST(Prng, NeighbouringSeedsDoNotShareShiftedStreams) {
  for (std::uint64_t i = 0; i < 64; ++i) {
    Prng a = Prng::derive(5, i + 2), b = Prng::derive(7, i);
    ASSERT_NE(a.next_u64(), b.next_u64()) << i;
  }
}

TEST(Prng, UniformInUnitInterval) {
  Prng rng(3);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Prng, GaussianMoments) {
  Prng rng(2024);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.gaussian();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_GE(sd, 0.98);
  EXPECT_LE(sd, 1.02);
}

TEST(Prng, IndexStaysInRange) {
  Prng rng(5);
  for (std::size_t n : {1u, 2u, 7u, 1000u}) {
    for (int i = 0; i < 1000; ++i) ASSERT_LT(rng.index(n), n);
  }
}
