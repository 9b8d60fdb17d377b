#include <gtest/gtest.h>

#include <set>

#include "cvs/rng.hpp"

using namespace cvs;

TEST(Rng, DerivedStreamsAreIndependentAndStable) {
  EXPECT_EQ(derive_seed(1, "shuffle", 3), derive_seed(1, "shuffle", 3));
  std::set<std::uint64_t> seeds;
  for (std::uint64_t root : {0ull, 1ull})
    for (const char* tag : {"shuffle", "dropout", "augment"})
      for (std::uint64_t a = 0; a < 4; ++a) seeds.insert(derive_seed(root, tag, a));
  EXPECT_EQ(seeds.size(), 24u);
  EXPECT_NE(derive_seed(0, "x", 1, 2), derive_seed(0, "x", 2, 1));
}

TEST(Rng, UniformHelpers) {
  Rng rng(5);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    ASSERT_LT(uniform_index(rng, 7), 7u);
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(Rng, StandardNormalMoments) {
  Rng rng(6);
  double s = 0, s2 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double z = standard_normal(rng);
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Rng, ShuffleIsAPermutation) {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  Rng rng(1);
  auto w = v;
  shuffle(w.begin(), w.end(), rng);
  EXPECT_NE(w, v);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(w, v);
}
