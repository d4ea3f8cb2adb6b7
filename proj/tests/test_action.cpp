#include <gtest/gtest.h>

#include <random>

#include <mfmeta/action.hpp>
#include <mfmeta/config.hpp>
#include <mfmeta/fixtures.hpp>

#include "oracles.hpp"

using namespace mfmeta;

namespace {

EmpiricalVector two_color(double c1, double p1) { return EmpiricalVector(1, 2, {1 - c1, c1, 1 - p1, p1}); }

BlockModel ring_model() { return load_model(std::string(MFMETA_SOURCE_DIR) + "/configs/three_color_ring.json"); }

}  // namespace

TEST(TauStar, SpecialValues) {
  EXPECT_EQ(legendre_tau_star(0.0), 0.0);
  EXPECT_EQ(legendre_tau_star(-1.0), 1.0);
  EXPECT_TRUE(std::isinf(legendre_tau_star(-1.5)));
  EXPECT_NEAR(legendre_tau_star(std::exp(1.0) - 1), 1.0, 1e-15);
  EXPECT_NEAR(legendre_tau_star(1.0), 2 * std::log(2.0) - 1, 1e-15);
}

TEST(TauStar, SeriesBranchAgreesWithLongDouble) {
  for (double u : {-9e-3, -1e-4, -1e-8, 1e-10, 3e-6, 5e-3, 9.99e-3}) {
    long double x = u;
    long double ref = (1 + x) * std::log1p(x) - x;
    EXPECT_NEAR(legendre_tau_star(u), static_cast<double>(ref), 1e-18 + 1e-12 * std::abs(static_cast<double>(ref)));
  }
}

TEST(TauStar, IsTheConjugateOfTau) {
  // tau*(u) = sup_x (u x - tau(x)), maximizer x = log(1 + u)
  for (double u : {-0.9, -0.3, 0.2, 1.0, 4.0}) {
    double x = std::log1p(u);
    EXPECT_NEAR(legendre_tau_star(u), u * x - tau(x), 1e-14);
    for (double dx : {-0.1, 0.1}) EXPECT_GE(legendre_tau_star(u), u * (x + dx) - tau(x + dx));
  }
}

TEST(ComponentDual, MatchesBruteForcePrimal) {
  std::mt19937_64 g(21);
  std::uniform_real_distribution<double> U(0.05, 1.0), V(-1.0, 1.0);
  std::vector<ColorGraph> graphs = {ColorGraph::complete(2), ColorGraph::complete(3),
                                    ColorGraph(3, {{0, 1}, {1, 2}, {2, 0}}),
                                    ColorGraph(3, {{0, 1}, {1, 2}, {2, 0}, {1, 0}})};
  for (int rep = 0; rep < 40; ++rep) {
    const ColorGraph& gr = graphs[rep % graphs.size()];
    int k = gr.colors();
    std::vector<double> mu(k), lam(gr.edge_count()), v(k), w(gr.edge_count());
    double s = 0;
    for (auto& x : mu) s += (x = U(g));
    for (auto& x : mu) x /= s;
    for (auto& x : lam) x = U(g) * 2;
    double vs = 0;
    for (auto& x : v) vs += (x = V(g));
    for (auto& x : v) x -= vs / k;
    for (int e = 0; e < gr.edge_count(); ++e) w[e] = mu[gr.edge(e).from] * lam[e];
    auto d = solve_component_dual(gr, mu.data(), lam.data(), v.data());
    EXPECT_TRUE(d.converged);
    EXPECT_NEAR(d.value, oracle::primal_min_cost(gr, w, v), 1e-8) << "rep " << rep;
  }
}

TEST(ComponentDual, ZeroVelocityAtRestAndInfeasibleOutflow) {
  ColorGraph g = ColorGraph::complete(3);
  std::vector<double> mu = {0.0, 0.5, 0.5}, lam(6, 1.0), v = {-0.1, 0.05, 0.05};
  EXPECT_TRUE(std::isinf(solve_component_dual(g, mu.data(), lam.data(), v.data()).value));
}

TEST(ComponentDual, HoldingStillCostsUnlessAtRest) {
  // two colors: (sqrt(a) - sqrt(b))^2
  ColorGraph g2 = ColorGraph::complete(2);
  std::vector<double> mu = {0.3, 0.7}, lam = {2.0, 0.5}, zero(3, 0.0);
  double a = 0.3 * 2.0, b = 0.7 * 0.5;
  EXPECT_NEAR(solve_component_dual(g2, mu.data(), lam.data(), zero.data()).value,
              std::pow(std::sqrt(a) - std::sqrt(b), 2), 1e-14);
  EXPECT_NEAR(component_cost(g2, mu.data(), lam.data(), zero.data()), std::pow(std::sqrt(a) - std::sqrt(b), 2), 1e-14);
  ColorGraph g3 = ColorGraph(3, {{0, 1}, {1, 2}, {2, 0}});
  std::vector<double> mu3 = {0.2, 0.3, 0.5}, lam3 = {1.0, 0.4, 0.9}, w(3);
  for (int e = 0; e < 3; ++e) w[e] = mu3[g3.edge(e).from] * lam3[e];
  EXPECT_NEAR(solve_component_dual(g3, mu3.data(), lam3.data(), zero.data()).value,
              oracle::primal_min_cost(g3, w, zero), 1e-8);
  // at rest for the rates
  std::vector<double> still = {0.5, 0.5};
  std::vector<double> same = {1.0, 1.0};
  EXPECT_NEAR(solve_component_dual(g2, still.data(), same.data(), zero.data()).value, 0.0, 1e-15);
}

TEST(DualDensity, VanishesOnTheFlowVelocity) {
  BlockModel m = ring_model();
  auto x = EmpiricalVector(2, 3, {0.2, 0.3, 0.5, 0.6, 0.3, 0.1, 0.3, 0.3, 0.4, 0.1, 0.1, 0.8});
  std::vector<double> theta(12, 0.0);
  auto d = dual_action_density(m, x, theta);
  EXPECT_NEAR(d.weighted, 0.0, 1e-14);
  theta[0] = 0.1;
  theta[1] = -0.1;
  EXPECT_GT(dual_action_density(m, x, theta).weighted, 0.0);
}

TEST(Action, OptimalRatesAreVelocityConsistentAndMinimal) {
  BlockModel m = ring_model();
  auto a = EmpiricalVector(2, 3, {0.2, 0.3, 0.5, 0.6, 0.3, 0.1, 0.3, 0.3, 0.4, 0.1, 0.1, 0.8});
  auto b = EmpiricalVector(2, 3, {0.5, 0.3, 0.2, 0.2, 0.3, 0.5, 0.4, 0.4, 0.2, 0.3, 0.3, 0.4});
  PathGrid p = straight_path(a, b, 2.0, 8);
  auto opt = optimal_rates(m, p);
  double s_opt = action(m, p, opt);
  EXPECT_NEAR(s_opt, path_action(m, p), 1e-10);
  auto tr = velocity_to_rates(m, p);
  EXPECT_GT(action(m, p, tr), s_opt);
}

TEST(Action, RejectsInconsistentRates) {
  BlockModel m = bistable_model();
  PathGrid p = straight_path(two_color(0.2, 0.2), two_color(0.4, 0.4), 1.0, 4);
  auto r = velocity_to_rates(m, p);
  r.segments[2][0] *= 1.01;
  EXPECT_THROW(action(m, p, r), std::invalid_argument);
}

TEST(Action, TransportRatesMatchHandComputation) {
  // One segment moving 0.1 of color-0 mass to color 1 in both categories.
  BlockModel m = bistable_model();
  auto a = two_color(0.2, 0.2), b = two_color(0.3, 0.3);
  PathGrid p = straight_path(a, b, 0.5, 1);
  auto r = velocity_to_rates(m, p);
  double mid0 = 0.75, flux = 0.1 / 0.5;
  EXPECT_NEAR(r(0, 0, 0), flux / mid0, 1e-14);
  EXPECT_EQ(r(0, 0, 1), 0.0);
  double up = 0.1 + 1.5 * 0.25 * 0.25, down = 0.1 + 1.5 * 0.75 * 0.75;
  double per_comp = mid0 * up * legendre_tau_star(flux / mid0 / up - 1) + 0.25 * down;
  EXPECT_NEAR(action(m, p, r), 0.5 * per_comp, 1e-14);
}

TEST(Action, ZeroAlongTheFlowAndShrinksWithStep) {
  BlockModel m = bistable_model();
  double prev = infinity;
  for (double dt : {4e-3, 2e-3, 1e-3}) {
    auto sol = integrate(m, two_color(0.3, 0.45), 5.0, dt);
    PathGrid p{sol.times, sol.states};
    double s = path_action(m, p);
    EXPECT_LT(s, 1e-3);
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(ConstantVelocity, ActionBelowExplicitBound) {
  BlockModel m = ring_model();
  auto nu = EmpiricalVector(2, 3, {0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.2, 0.2, 0.6, 0.05, 0.05, 0.9});
  auto xi = EmpiricalVector(2, 3, {0.1, 0.2, 0.7, 0.3, 0.1, 0.6, 0.6, 0.2, 0.2, 0.9, 0.05, 0.05});
  for (double T : {0.1, 1.0, 10.0})
    for (int seg : {1, 4, 16}) {
      auto r = constant_velocity_path(m, nu, xi, T, seg);
      EXPECT_TRUE(std::isfinite(r.action));
      EXPECT_LE(r.action, r.bound);
    }
  BlockModel bm = bistable_model();
  auto r = constant_velocity_path(bm, two_color(0.0, 0.0), two_color(1.0, 1.0), 1.0, 8);
  EXPECT_LE(r.action, r.bound);
}

TEST(Rescale, IdentityHoldsAndBoundApplies) {
  BlockModel m = ring_model();
  auto nu = EmpiricalVector(2, 3, {0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.2, 0.2, 0.6, 0.05, 0.05, 0.9});
  auto xi = EmpiricalVector(2, 3, {0.1, 0.2, 0.7, 0.3, 0.1, 0.6, 0.6, 0.2, 0.2, 0.9, 0.05, 0.05});
  auto base = constant_velocity_path(m, nu, xi, 2.0, 6);
  for (double beta : {0.25, 0.9, 1.0, 1.7, 5.0}) {
    auto r = rescale_path(m, base.path, base.rates, beta);
    EXPECT_NEAR(r.action, r.predicted, 1e-11 * std::max(1.0, r.action));
    EXPECT_LE(r.action, r.bound + 1e-12);
    EXPECT_NEAR(r.path.horizon(), 2.0 / beta, 1e-12);
  }
  EXPECT_THROW(rescale_path(m, base.path, base.rates, 0.0), std::invalid_argument);
}
