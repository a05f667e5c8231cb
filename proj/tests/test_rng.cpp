#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "icse/rng.hpp"

using namespace icse;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.next_u64(), b.next_u64());
  }
}

TEST(Rng, DifferentSeedsDiverge) {
  Rng a(1), b(2);
  int differing = 0;
  for (int i = 0; i < 64; ++i) {
    if (a.next_u64() != b.next_u64()) ++differing;
  }
  EXPECT_GT(differing, 60);
}

TEST(Rng, Uniform01Bounds) {
  Rng rng(7);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, UniformMoments) {
  Rng rng(3);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(-1.0, 1.0);
    sum += u;
    sumsq += u * u;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sumsq / n, 1.0 / 3.0, 0.01);  // Var(U[-1,1]) = 1/3
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sumsq / n, 1.0, 0.02);
}

TEST(SeedDerivation, DomainsAreDisjoint) {
  const std::uint64_t base = 123456;
  std::unordered_set<std::uint64_t> seen;
  const SeedDomain domains[] = {SeedDomain::train_data, SeedDomain::calibration,
                                SeedDomain::test_data, SeedDomain::weight_init,
                                SeedDomain::dataset_gen};
  for (SeedDomain d : domains) {
    for (std::uint64_t i = 0; i < 20000; ++i) {
      const auto seed = derive_seed(base, d, i);
      ASSERT_TRUE(seen.insert(seed).second)
          << "seed collision across domains/indices";
    }
  }
}

TEST(SeedDerivation, DependsOnEveryInput) {
  EXPECT_NE(derive_seed(1, SeedDomain::train_data, 0),
            derive_seed(2, SeedDomain::train_data, 0));
  EXPECT_NE(derive_seed(1, SeedDomain::train_data, 0),
            derive_seed(1, SeedDomain::test_data, 0));
  EXPECT_NE(derive_seed(1, SeedDomain::train_data, 0),
            derive_seed(1, SeedDomain::train_data, 1));
}
