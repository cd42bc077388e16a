#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "pint/metrics.hpp"

using namespace pint;
using namespace pint::testing;

namespace {

BinaryMask random_mask(std::size_t h, std::size_t w, CounterRng& rng, double density) {
  BinaryMask m(h, w);
  for (auto& v : m.fg) v = rng.uniform() < density;
  return m;
}

}  // namespace

TEST(Dice, Examples) {
  BinaryMask a(4, 4), b(4, 4);
  EXPECT_EQ(dice(a, b), 1.0);  // both empty
  a.fg[0] = a.fg[1] = 1;
  b = a;
  EXPECT_EQ(dice(a, b), 1.0);
  BinaryMask c(4, 4);
  c.fg[5] = 1;
  EXPECT_EQ(dice(a, c), 0.0);
  BinaryMask p(4, 4), g(4, 4);
  for (int i : {0, 1, 2, 3}) p.fg[i] = 1;
  for (int i : {2, 3, 4, 5}) g.fg[i] = 1;
  EXPECT_EQ(dice(p, g), 0.5);
  EXPECT_THROW(dice(BinaryMask(3, 4), BinaryMask(4, 4)), ShapeError);
}

TEST(Asd, Examples) {
  BinaryMask a(8, 8), b(8, 8);
  a.fg[3 * 8 + 1] = 1;
  b.fg[3 * 8 + 4] = 1;
  EXPECT_DOUBLE_EQ(asd(a, b), 3.0);
  EXPECT_EQ(asd(a, a), 0.0);
  EXPECT_THROW(asd(a, BinaryMask(8, 8)), UndefinedMetricError);
  EXPECT_DOUBLE_EQ(asd_sentinel(3, 4), 5.0);
}

TEST(Asd, InteriorPixelsAreNotBoundary) {
  BinaryMask m(5, 5);
  for (std::size_t y = 1; y < 4; ++y)
    for (std::size_t x = 1; x < 4; ++x) m.fg[y * 5 + x] = 1;
  const BinaryMask b = boundary(m);
  EXPECT_EQ(b.count(), 8u);
  EXPECT_FALSE(b.at(2, 2));
}

TEST(Metrics, MatchBruteForceOracles) {
  CounterRng rng(99);
  for (int i = 0; i < 200; ++i) {
    const std::size_t h = 1 + rng.below(32), w = 1 + rng.below(32);
    const double dens = 0.05 + 0.9 * rng.uniform();
    BinaryMask p = random_mask(h, w, rng, dens), g = random_mask(h, w, rng, dens);
    EXPECT_EQ(dice(p, g), dice_oracle(p, g));
    EXPECT_EQ(dice(p, g), dice(g, p));
    if (!p.empty() && !g.empty()) {
      EXPECT_NEAR(asd(p, g), asd_oracle(p, g), 1e-9);
      EXPECT_NEAR(asd(p, g), asd(g, p), 1e-12);
    }
  }
}

TEST(Metrics, DiceOneIffEqual) {
  CounterRng rng(5);
  for (int i = 0; i < 50; ++i) {
    BinaryMask p = random_mask(6, 6, rng, 0.3), g = random_mask(6, 6, rng, 0.3);
    EXPECT_EQ(dice(p, g) == 1.0, p == g);
    EXPECT_EQ(dice(p, p), 1.0);
  }
}

TEST(Asd, TranslationInvariantAwayFromBorders) {
  CounterRng rng(8);
  for (int i = 0; i < 20; ++i) {
    BinaryMask p(32, 32), g(32, 32), ps(32, 32), gs(32, 32);
    for (std::size_t y = 8; y < 20; ++y)
      for (std::size_t x = 8; x < 20; ++x) {
        p.fg[y * 32 + x] = rng.uniform() < 0.6;
        g.fg[y * 32 + x] = rng.uniform() < 0.6;
        ps.fg[(y + 5) * 32 + x + 3] = p.fg[y * 32 + x];
        gs.fg[(y + 5) * 32 + x + 3] = g.fg[y * 32 + x];
      }
    EXPECT_NEAR(asd(p, g), asd(ps, gs), 1e-12);
  }
}
