// One line per acceptance criterion; arguments select a subset, e.g. `acceptance 1 7`.
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <mfmeta/experiments.hpp>
#include <mfmeta/fixtures.hpp>

#include "oracles.hpp"

using namespace mfmeta;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Notes {
 public:
  void fail(const std::string& s) {
    ok_ = false;
    add(s);
  }
  void add(const std::string& s) { os_ << (os_.tellp() > 0 ? "; " : "") << s; }
  void check(bool c, const std::string& s) {
    if (!c) fail(s);
  }
  Outcome done() const { return {ok_, os_.str()}; }

 private:
  bool ok_ = true;
  std::ostringstream os_;
};

std::string num(double x, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

int hardware_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

EmpiricalVector two_color(double c1, double p1) { return EmpiricalVector(1, 2, {1 - c1, c1, 1 - p1, p1}); }

CostMatrix example8() {
  return CostMatrix(8, {0,  2,  4,  6,  7, 6,  12, 8,  6,  0,  1,  8,  9,  11, 13, 15, 5,  7,  0,  10, 11, 8,
                        9,  11, 5,  10, 20, 0, 3,  4,  8,  9,  10, 11, 12, 7,  0,  18, 16, 21, 7,  11, 13, 9,
                        11, 0,  8,  6,  8,  9, 14, 8,  13, 4,  0,  10, 15, 12, 9,  7,  10, 11, 5,  0});
}

int find_set(const CycleLevel& lv, const std::vector<int>& s) {
  for (int p = 0; p < lv.size(); ++p)
    if (lv.compacts[p] == s) return p;
  return -1;
}

// Cycle hierarchy of the 8x8 example, exact integers.
Outcome golden_cycles() {
  Notes n;
  auto cm = example8();
  auto a = base_arrows(cm);
  n.check(a.target == std::vector<int>{1, 2, 0, 4, 3, 7, 5, 6}, "base arrows differ");
  auto h = build_hierarchy(cm);
  if (h.height() != 3) {
    n.fail("height " + std::to_string(h.height()));
    return n.done();
  }
  auto expect = [&](const char* what, double got, double want) {
    if (got != want) n.fail(std::string(what) + " = " + num(got) + ", expected " + num(want));
  };
  const auto& l1 = h.levels[1];
  int p1 = find_set(l1, {0, 1, 2}), p2 = find_set(l1, {3, 4}), p3 = find_set(l1, {5, 6, 7});
  if (l1.size() != 3 || p1 < 0 || p2 < 0 || p3 < 0) {
    n.fail("level-1 cycles differ");
    return n.done();
  }
  expect("Vhat{1,2,3}", l1.v_hat[p1], 5);
  expect("V({1,2,3},{4,5})", l1.pair(p1, p2), 9);
  expect("V({1,2,3},{6,7,8})", l1.pair(p1, p3), 8);
  expect("Vhat{6,7,8}", l1.v_hat[p3], 6);
  expect("V({6,7,8},{1,2,3})", l1.pair(p3, p1), 7);
  expect("V({6,7,8},{4,5})", l1.pair(p3, p2), 8);
  expect("Vhat{4,5}", l1.v_hat[p2], 7);
  expect("V({4,5},{1,2,3})", l1.pair(p2, p1), 9);
  expect("V({4,5},{6,7,8})", l1.pair(p2, p3), 8);
  const auto& l2 = h.levels[2];
  int q1 = find_set(l2, {0, 1, 2, 5, 6, 7}), q2 = find_set(l2, {3, 4});
  if (l2.size() != 2 || q1 < 0 || q2 < 0) {
    n.fail("level-2 partition differs");
    return n.done();
  }
  expect("Vhat{1,2,3,6,7,8}", l2.v_hat[q1], 8);
  expect("V({1,2,3,6,7,8},{4,5})", l2.pair(q1, q2), 10);
  expect("Vhat{4,5} at level 2", l2.v_hat[q2], 7);
  expect("V({4,5},{1,2,3,6,7,8})", l2.pair(q2, q1), 8);
  n.check(h.levels[3].size() == 1 && h.levels[3].compacts[0].size() == 8, "top level is not a single cycle of all 8");
  if (n.done().pass) n.add("all values match");
  return n.done();
}

// tau* special values, convexity and the beta-scaling identity.
Outcome tau_star_suite() {
  Notes n;
  n.check(legendre_tau_star(0.0) == 0.0, "tau*(0) != 0");
  n.check(legendre_tau_star(-1.0) == 1.0, "tau*(-1) != 1");
  for (double u : {-1.0000001, -1.5, -10.0, -1e300}) n.check(std::isinf(legendre_tau_star(u)), "tau*(" + num(u) + ") finite");
  std::mt19937_64 g(2);
  std::uniform_real_distribution<double> U(-1, 20), L(0, 1), P(0, 10), B(0.01, 10);
  double worst_convex = 0, worst_beta = 0;
  for (int k = 0; k < 10000; ++k) {
    double a = U(g), b = U(g), l = L(g);
    double lhs = legendre_tau_star(l * a + (1 - l) * b);
    double rhs = l * legendre_tau_star(a) + (1 - l) * legendre_tau_star(b);
    worst_convex = std::max(worst_convex, (lhs - rhs) / std::max(1.0, std::abs(rhs)));
    double u = P(g), beta = B(g);
    double x = legendre_tau_star(beta * u - 1);
    double y = beta * (u * std::log(beta) + legendre_tau_star(u - 1) + (1 - beta) / beta);
    worst_beta = std::max(worst_beta, std::abs(x - y) / std::max(1.0, std::abs(x)));
  }
  n.check(worst_convex <= 1e-12, "convexity violated by " + num(worst_convex));
  n.check(worst_beta <= 1e-12, "beta identity off by " + num(worst_beta));
  n.add("max convexity excess " + num(worst_convex, 3) + ", max beta residual " + num(worst_beta, 3) + " (relative)");
  return n.done();
}

// Action of the RK4 flow vanishes as the step shrinks.
Outcome zero_action_flow() {
  Notes n;
  BlockModel m = bistable_model();
  double prev = infinity;
  for (double dt : {4e-3, 2e-3, 1e-3}) {
    auto sol = integrate(m, two_color(0.3, 0.45), 5.0, dt);
    double s = path_action(m, PathGrid{sol.times, sol.states});
    n.add("dt=" + num(dt) + ": " + num(s, 3));
    n.check(s < prev, "not decreasing at dt=" + num(dt));
    prev = s;
  }
  n.check(prev < 1e-3, "action at dt=1e-3 is " + num(prev));
  return n.done();
}

Outcome lln() {
  Notes n;
  ExperimentConfig c;
  c.kind = "lln";
  c.model = model_to_json(bistable_model());
  c.n_values = {10000};
  c.horizon = 5;
  c.replicas = 100;
  c.inits = {two_color(0.3, 0.45).values()};
  c.seed = 4;
  c.threads = hardware_threads();
  auto r = run_lln(c).content["results"];
  int within = r["within_tolerance"];
  n.check(within >= 95, std::to_string(within) + " replicas within 0.05");
  n.add(std::to_string(within) + "/100 within 0.05, max " + num(r["max_sup_distance"].get<double>(), 3));
  return n.done();
}

// Two-sample chi-square on the terminal (central, peripheral) counts of color 1.
Outcome simulator_equivalence() {
  Notes n;
  BlockModel m = bistable_model();
  const int N = 20, R = 10000;
  auto init = counts_from_fractions(m, EmpiricalVector(1, 2, {0.7, 0.3, 0.4, 0.6}), N);
  std::vector<int> agg(R), node(R);
  auto key = [&](const TrajectoryRecord& rec) {
    PathReplay rp(rec);
    rp.advance_to(rec.horizon);
    return rp.counts()(0, 1) * (N + 1) + rp.counts()(1, 1);
  };
  parallel_for(R, hardware_threads(), [&](int r) {
    agg[r] = key(simulate(m, init, 1.0, substream_seed(5, 1, r)));
    node[r] = key(simulate_per_node(m, init, 1.0, substream_seed(5, 2, r)));
  });
  std::map<int, std::pair<int, int>> cells;
  for (int r = 0; r < R; ++r) {
    ++cells[agg[r]].first;
    ++cells[node[r]].second;
  }
  // cells with fewer than 10 pooled observations are merged
  std::vector<std::pair<int, int>> bins;
  std::pair<int, int> rest{0, 0};
  for (auto& [k, ab] : cells) {
    if (ab.first + ab.second >= 10) bins.push_back(ab);
    else {
      rest.first += ab.first;
      rest.second += ab.second;
    }
  }
  if (rest.first + rest.second > 0) bins.push_back(rest);
  double chi = 0;
  for (auto& [a, b] : bins) chi += double(a - b) * (a - b) / (a + b);
  int df = static_cast<int>(bins.size()) - 1;
  double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), chi));
  n.check(p > 0.001, "p = " + num(p));
  n.add("chi2 = " + num(chi, 4) + ", df = " + std::to_string(df) + ", p = " + num(p, 4));
  return n.done();
}

// Library segment density (dual, optimal rates) against a primal flow minimization.
Outcome primal_dual() {
  Notes n;
  std::mt19937_64 g(6);
  std::uniform_real_distribution<double> U(0, 1);
  std::vector<ColorGraph> graphs = {ColorGraph::complete(2), ColorGraph::complete(3), ColorGraph(3, {{0, 1}, {1, 2}, {2, 0}}),
                                    ColorGraph(3, {{0, 1}, {1, 2}, {2, 0}, {1, 0}})};
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const ColorGraph& gr = graphs[rep % graphs.size()];
    int k = gr.colors(), ne = gr.edge_count();
    BlockModel m;
    m.graph = gr;
    double pc = 0.2 + 0.6 * U(g);
    m.blocks = {{1.0, pc, 1 - pc}};
    m.rates.lower_bound = 0.01;
    m.rates.upper_bound = 10;
    for (int cat = 0; cat < 2; ++cat) {
      std::vector<ParametricRate> per_edge(ne);
      for (auto& r : per_edge) {
        r.base = 0.1 + U(g);
        ArgRef a{cat == 0 ? ArgRef::own_central : ArgRef::own_peripheral, 0, static_cast<int>(U(g) * k)};
        r.terms.push_back({2 * U(g), a, std::nullopt});
      }
      m.rates.parametric[cat] = {per_edge};
    }
    std::vector<double> x(2 * k), v(2 * k);
    for (int c = 0; c < 2; ++c) {
      double s = 0, vs = 0;
      for (int z = 0; z < k; ++z) s += (x[c * k + z] = 0.1 + U(g));
      for (int z = 0; z < k; ++z) x[c * k + z] /= s;
      for (int z = 0; z < k; ++z) vs += (v[c * k + z] = U(g) - 0.5);
      for (int z = 0; z < k; ++z) v[c * k + z] -= vs / k;
    }
    double h = 0.05;
    std::vector<double> a(2 * k), b(2 * k);
    for (int i = 0; i < 2 * k; ++i) {
      a[i] = x[i] - v[i] * h / 2;
      b[i] = x[i] + v[i] * h / 2;
    }
    PathGrid p{{0, h}, {EmpiricalVector(1, k, a), EmpiricalVector(1, k, b)}};
    double dual = path_action(m, p) / h;
    RateEvaluator ev(m);
    std::vector<double> lam(2 * ne);
    ev.all_rates(x.data(), lam.data());
    double primal = 0;
    for (int c = 0; c < 2; ++c) {
      std::vector<double> w(ne), vc(v.begin() + c * k, v.begin() + (c + 1) * k);
      for (int e = 0; e < ne; ++e) w[e] = x[c * k + gr.edge(e).from] * lam[c * ne + e];
      primal += m.weight(c) * oracle::primal_min_cost(gr, w, vc);
    }
    worst = std::max(worst, std::abs(dual - primal));
  }
  n.check(worst <= 1e-6, "max difference " + num(worst));
  n.add("100 instances, max |dual - primal| = " + num(worst, 3));
  return n.done();
}

Outcome qpot_vs_dp() {
  Notes n;
  BlockModel m = bistable_model();
  auto cat = find_equilibria(m, {});
  QpotOptions o;
  o.threads = hardware_threads();
  auto r = quasipotential(m, cat.points[1].point, cat.points[2].point, o);
  double x0 = cat.points[1].point(0, 1);
  oracle::BirthDeath1D bd{[](double x) { return 0.1 + 1.5 * x * x; }, [](double x) { return 0.1 + 1.5 * (1 - x) * (1 - x); }};
  double dp = oracle::dp_quasipotential(bd, x0, 0.5, 2000);
  double rel = std::abs(r.value - dp) / dp;
  n.check(rel < 0.05, "relative difference " + num(rel));
  n.add("qpot " + num(r.value) + " vs grid " + num(dp) + " (" + num(100 * rel, 3) + "%)");
  return n.done();
}

Outcome w_graphs() {
  Notes n;
  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> U(0, 10);
  std::uniform_int_distribution<int> Z(0, 5);
  int sets = 0;
  double worst_min = 0, lowest_I = infinity;
  for (int l = 1; l <= 5; ++l) {
    for (int integer = 0; integer < 2; ++integer) {
      std::vector<std::vector<double>> V(l, std::vector<double>(l, 0.0));
      CostMatrix cm(l);
      for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j)
          if (i != j) cm(i, j) = V[i][j] = integer ? Z(g) : U(g);
      for (int mask = 1; mask < (1 << l); ++mask) {
        std::vector<int> W;
        for (int k = 0; k < l; ++k)
          if (mask >> k & 1) W.push_back(k);
        auto a = enumerate_w_graphs(l, W);
        auto b = oracle::brute_w_graphs(l, W);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a != b) n.fail("graph set differs at l=" + std::to_string(l) + " mask=" + std::to_string(mask));
        ++sets;
        worst_min = std::max(worst_min, std::abs(min_w_graph(cm, W) - oracle::brute_min(V, W)));
        for (int i = 0; i < l; ++i) {
          if (mask >> i & 1) continue;
          auto e = exponents_I(cm, i, W);
          for (std::size_t t = 0; t < e.targets.size(); ++t) {
            int j = e.targets[t];
            double want = oracle::brute_min(V, W, i, j) - oracle::brute_min(V, W);
            worst_min = std::max(worst_min, std::abs(e.I_to[t] - want));
            lowest_I = std::min(lowest_I, e.I_to[t]);
          }
        }
      }
    }
  }
  n.check(worst_min <= 1e-12, "minimum differs by " + num(worst_min));
  n.check(lowest_I >= 0, "negative I_ij: " + num(lowest_I));
  double lowest_lambda = infinity;
  for (int rep = 0; rep < 100; ++rep) {
    int l = 2 + rep % 4;
    CostMatrix cm(l);
    for (int i = 0; i < l; ++i)
      for (int j = 0; j < l; ++j)
        if (i != j) cm(i, j) = rep % 2 ? Z(g) : U(g);
    lowest_lambda = std::min(lowest_lambda, lambda_constant(cm));
  }
  n.check(lowest_lambda >= 0, "negative Lambda: " + num(lowest_lambda));
  n.add(std::to_string(sets) + " (l, W) pairs on 2 matrices each l; min I_ij = " + num(lowest_I, 3) +
        ", min Lambda = " + num(lowest_lambda, 3));
  return n.done();
}

Outcome exit_scaling() {
  Notes n;
  ExperimentConfig c;
  c.kind = "exit_scaling";
  c.model = model_to_json(bistable_model());
  c.n_values = {100, 200, 400};
  c.replicas = 200;
  c.r0 = 0.12;
  c.seed = 9;
  c.threads = hardware_threads();
  auto r = run_exit_scaling(c).content["results"];
  if (!r["slope_available"].get<bool>() || r["partial"].get<bool>()) {
    n.fail("slope unavailable or partial report");
    return n.done();
  }
  double slope = r["slope"], se = r["slope_se"], q = r["exit_cost"], rel = r["relative_difference"];
  n.check(rel <= 0.2, "relative difference " + num(rel));
  std::ostringstream os;
  for (auto& row : r["per_n"]) os << " N=" << row["n"] << ":" << num(row["mean_exit_time"].get<double>(), 4);
  n.add("slope " + num(slope, 4) + " +- " + num(se, 2) + " vs exit cost " + num(q, 4) + " (" + num(100 * rel, 3) +
        "%), means" + os.str());
  return n.done();
}

Outcome occupation() {
  Notes n;
  ExperimentConfig c;
  c.kind = "invariant_occupation";
  c.model = model_to_json(bistable_model(0.2, 0.24, 1.5));
  c.n_values = {100};
  c.horizon = 1e4;
  c.seed = 10;
  c.threads = hardware_threads();
  auto r = run_invariant_occupation(c).content["results"];
  int dom = r["dominant"], pred = r["predicted_dominant"];
  n.check(!r["s_ties"].get<bool>(), "s has ties");
  n.check(dom == pred, "dominant compact " + std::to_string(dom) + ", s predicts " + std::to_string(pred));
  n.check(r["strictly_dominant"].get<bool>(), "occupation not strictly dominant");
  n.check(r["ordering_matches"].get<bool>(), "-log(occupation)/N ordering differs from s");
  n.add("occupation " + r["occupation"].dump() + ", -log/N " + r["neg_log_occupation_over_n"].dump() + ", s " +
        r["s"].dump());
  return n.done();
}

struct Criterion {
  int id;
  const char* name;
  double seconds;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion all[] = {
      {1, "cycle hierarchy golden values", 1, golden_cycles},
      {2, "tau* suite", 1, tau_star_suite},
      {3, "zero action along the flow", 10, zero_action_flow},
      {4, "law of large numbers", 120, lln},
      {5, "aggregated vs per-node simulator", 120, simulator_equivalence},
      {6, "primal/dual action density", 60, primal_dual},
      {7, "quasipotential vs grid oracle", 300, qpot_vs_dp},
      {8, "W-graph enumeration", 60, w_graphs},
      {9, "exit-time scaling", 1800, exit_scaling},
      {10, "invariant occupation ordering", 900, occupation},
  };
  std::vector<int> pick;
  for (int i = 1; i < argc; ++i) pick.push_back(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!pick.empty() && std::find(pick.begin(), pick.end(), c.id) == pick.end()) continue;
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (s > c.seconds) {
      o.pass = false;
      o.detail += "; runtime over " + num(c.seconds) + " s";
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s (%s; %.2f s)\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), s);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
