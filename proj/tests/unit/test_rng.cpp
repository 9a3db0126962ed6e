#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "tdlab/rng.hpp"

using tdlab::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, DerivedStreamsDependOnEveryPathElement) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t x = 0; x < 4; ++x)
    for (std::uint64_t y = 0; y < 4; ++y) firsts.insert(Rng::derive(7, {x, y}).next());
  EXPECT_EQ(firsts.size(), 16u);
  EXPECT_EQ(Rng::derive(7, {1, 2}).next(), Rng::derive(7, {1, 2}).next());
  EXPECT_NE(Rng::derive(7, {1, 2}).next(), Rng::derive(8, {1, 2}).next());
}

TEST(Rng, UniformInHalfOpenUnitInterval) {
  Rng r(1);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng r(2);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, NormalMoments) {
  Rng r(3);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}
