#include <gtest/gtest.h>

#include <mfmeta/fixtures.hpp>
#include <mfmeta/mvode.hpp>

using namespace mfmeta;

namespace {

EmpiricalVector two_color(double c1, double p1) { return EmpiricalVector(1, 2, {1 - c1, c1, 1 - p1, p1}); }

// Root of (1 - x)(a0 + b x^2) - x (a1 + b (1 - x)^2) on [lo, hi] by bisection.
double diagonal_root(double a0, double a1, double b, double lo, double hi) {
  auto f = [&](double x) { return (1 - x) * (a0 + b * x * x) - x * (a1 + b * (1 - x) * (1 - x)); };
  double flo = f(lo);
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi), fm = f(mid);
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(VectorField, MatchesBirthDeathFormula) {
  BlockModel m = bistable_model();
  auto x = two_color(0.3, 0.6);
  auto f = vector_field(m, x);
  double m1 = 0.45, m0 = 0.55;
  double up = 0.1 + 1.5 * m1 * m1, down = 0.1 + 1.5 * m0 * m0;
  EXPECT_NEAR(f[1], 0.7 * up - 0.3 * down, 1e-15);
  EXPECT_NEAR(f[3], 0.4 * up - 0.6 * down, 1e-15);
  EXPECT_NEAR(f[0] + f[1], 0.0, 1e-15);
}

TEST(Integrate, ConstantRatesMatchExponentialRelaxation) {
  BlockModel m = constant_rate_model(ColorGraph::complete(2), 1.0);
  m.rates.parametric[0][0][0].base = 0.3;  // 0 -> 1 for central nodes
  m.rates.lower_bound = 0.3;
  auto sol = integrate(m, two_color(0.9, 0.2), 4.0, 0.01);
  ASSERT_EQ(sol.states.size(), 401u);
  for (std::size_t i = 0; i < sol.times.size(); i += 50) {
    double t = sol.times[i];
    double xc = 0.3 / 1.3 + (0.9 - 0.3 / 1.3) * std::exp(-1.3 * t);
    double xp = 0.5 + (0.2 - 0.5) * std::exp(-2.0 * t);
    EXPECT_NEAR(sol.states[i](0, 1), xc, 1e-9);
    EXPECT_NEAR(sol.states[i](1, 1), xp, 1e-9);
  }
}

TEST(Integrate, ReversedFlowUndoesForwardFlow) {
  BlockModel m = bistable_model();
  auto x0 = two_color(0.3, 0.4);
  auto fw = integrate(m, x0, 2.0, 0.001);
  auto bw = integrate(m, fw.states.back(), 2.0, 0.001, Direction::reversed);
  EXPECT_LT(product_metric(bw.states.back(), x0), 1e-10);
}

TEST(Integrate, StaysOnProductOfSimplices) {
  BlockModel m = constant_rate_model(ColorGraph(3, {{0, 1}, {1, 2}, {2, 0}}), 0.5, 2);
  auto sol = integrate(m, EmpiricalVector(2, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0.2, 0.3, 0.5}), 3.0, 0.05);
  for (auto& s : sol.states)
    for (int c = 0; c < 4; ++c) {
      double sum = 0;
      for (int z = 0; z < 3; ++z) {
        EXPECT_GE(s(c, z), 0.0);
        sum += s(c, z);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Integrate, ReversedFlowLeavingSimplexIsReported) {
  BlockModel m = bistable_model();
  EXPECT_THROW(integrate(m, two_color(0.01, 0.01), 5.0, 0.01, Direction::reversed), std::runtime_error);
}

TEST(Equilibria, BistableFixtureHasTwoStablePointsAndASaddle) {
  BlockModel m = bistable_model();
  auto cat = find_equilibria(m, {});
  ASSERT_EQ(cat.size(), 3u);
  double lo = diagonal_root(0.1, 0.1, 1.5, 0.0, 0.3), hi = diagonal_root(0.1, 0.1, 1.5, 0.7, 1.0);
  EXPECT_TRUE(cat.points[0].stable);
  EXPECT_TRUE(cat.points[1].stable);
  EXPECT_FALSE(cat.points[2].stable);
  // stable points sorted lexicographically: high color-1 mass first
  EXPECT_NEAR(cat.points[0].point(0, 1), hi, 1e-9);
  EXPECT_NEAR(cat.points[0].point(1, 1), hi, 1e-9);
  EXPECT_NEAR(cat.points[1].point(0, 1), lo, 1e-9);
  EXPECT_NEAR(cat.points[2].point(0, 1), 0.5, 1e-9);
  for (auto& p : cat.points) {
    auto f = vector_field(m, p.point);
    for (double v : f) EXPECT_LT(std::abs(v), 1e-10);
  }
  EXPECT_GT(cat.min_separation(), 2 * cat.r0);
  EXPECT_LT(cat.r1, cat.r0);
}

TEST(Equilibria, AsymmetricFixtureRoots) {
  BlockModel m = bistable_model(0.2, 0.24, 1.5);
  auto cat = find_equilibria(m, {}).stable_only();
  ASSERT_EQ(cat.size(), 2u);
  EXPECT_NEAR(cat.points[1].point(0, 1), diagonal_root(0.2, 0.24, 1.5, 0.0, 0.4), 1e-9);
  EXPECT_NEAR(cat.points[0].point(0, 1), diagonal_root(0.2, 0.24, 1.5, 0.65, 1.0), 1e-9);
}

TEST(Equilibria, ConstantRatesGiveSingleStablePoint) {
  BlockModel m = constant_rate_model(ColorGraph(3, {{0, 1}, {1, 2}, {2, 0}}), 0.5);
  auto cat = find_equilibria(m, {});
  ASSERT_EQ(cat.size(), 1u);
  EXPECT_TRUE(cat.points[0].stable);
  for (int z = 0; z < 3; ++z) EXPECT_NEAR(cat.points[0].point(0, z), 1.0 / 3, 1e-10);
}

TEST(Equilibria, RejectsOversizedRadius) {
  EquilibriumOptions o;
  o.r0 = 0.3;
  EXPECT_THROW(find_equilibria(bistable_model(), {}, o), std::invalid_argument);
}
