#ifndef MFMETA_ACTION_HPP
#define MFMETA_ACTION_HPP

#include <Eigen/Dense>

#include "model.hpp"
#include "mvode.hpp"

namespace mfmeta {

inline constexpr double infinity = std::numeric_limits<double>::infinity();

// tau*(u) = (u + 1) log(u + 1) - u, tau*(-1) = 1, +inf below -1.
inline double legendre_tau_star(double u) {
  if (std::isnan(u)) return u;
  if (u < -1) return infinity;
  if (u == -1) return 1.0;
  if (std::abs(u) < 1e-2) {
    // sum_{n>=2} (-u)^n / (n (n - 1))
    double s = 0, p = u * u;
    for (int n = 2; n < 14; ++n, p *= -u) s += p / (n * (n - 1.0));
    return s;
  }
  if (u == infinity) return infinity;
  return (1 + u) * std::log1p(u) - u;
}

// tau(x) = e^x - x - 1.
inline double tau(double x) { return std::expm1(x) - x; }

// Piecewise-linear path on a time grid.
struct PathGrid {
  std::vector<double> times;
  std::vector<EmpiricalVector> knots;

  int segments() const { return static_cast<int>(times.size()) - 1; }
  double horizon() const { return times.back() - times.front(); }
  double duration(int s) const { return times[s + 1] - times[s]; }
  Layout layout() const { return knots.front().layout(); }
  std::vector<double> midpoint(int s) const {
    const auto &a = knots[s].values(), &b = knots[s + 1].values();
    std::vector<double> m(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) m[i] = 0.5 * (a[i] + b[i]);
    return m;
  }
  std::vector<double> velocity(int s) const {
    const auto &a = knots[s].values(), &b = knots[s + 1].values();
    double dt = duration(s);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = (b[i] - a[i]) / dt;
    return v;
  }
  void check() const {
    if (times.size() < 2 || times.size() != knots.size()) throw std::invalid_argument("path needs >= 2 knots and matching times");
    for (int s = 0; s < segments(); ++s)
      if (!(times[s + 1] > times[s])) throw std::invalid_argument("path times must increase");
  }
};

// Off-diagonal rates held constant on each segment: [segment][comp * |E| + e].
struct RateMatrixPath {
  int edges = 0;
  std::vector<std::vector<double>> segments;
  double operator()(int s, int comp, int e) const { return segments[s][comp * edges + e]; }
};

// sup over potentials of the per-component dual problem
//   sum_z v(z) phi(z) - sum_e w_e (exp(phi(to) - phi(from)) - 1),  w_e = mu(from) lam_e,
// which equals the minimal cost sum_e w_e tau*(l_e / lam_e - 1) over rates l with
// velocity v.  phi(0) is pinned to zero.
struct ComponentDual {
  double value = 0;
  std::vector<double> potential;
  bool converged = true;
};

namespace detail {

// Mass that cannot leave a set closed under positive-weight edges.
inline bool dual_feasible(const ColorGraph& g, const double* w, const double* v) {
  int k = g.colors();
  if (k > 16) return true;
  for (unsigned s = 1; s + 1 < (1u << k); ++s) {
    bool closed = true;
    double net = 0;
    for (int z = 0; z < k && closed; ++z) {
      if (!(s >> z & 1u)) continue;
      net += v[z];
      for (int e : g.out_edges(z))
        if (w[e] > 0 && !(s >> g.edge(e).to & 1u)) closed = false;
    }
    if (closed && net < -1e-13) return false;
  }
  return true;
}

// Two colors, w01 = a, w10 = b, inflow into color 1 = x.
inline double two_color_dual(double a, double b, double x, double* phi_out = nullptr) {
  double root = std::sqrt(x * x + 4 * a * b);
  double ephi = x >= 0 ? (x + root) / (2 * a) : (2 * b) / (root - x);
  double phi = std::log(ephi);
  if (phi_out) *phi_out = phi;
  double val = x * phi - a * std::expm1(phi) - b * std::expm1(-phi);
  return val < 0 ? 0 : val;
}

}  // namespace detail

inline ComponentDual solve_component_dual(const ColorGraph& g, const double* mu, const double* lam, const double* v) {
  int k = g.colors(), ne = g.edge_count();
  ComponentDual out;
  out.potential.assign(k, 0.0);
  double w[64];
  std::vector<double> wbuf;
  double* wp = w;
  if (ne > 64) {
    wbuf.resize(ne);
    wp = wbuf.data();
  }
  double wmax = 0, vmax = 0;
  for (int e = 0; e < ne; ++e) {
    wp[e] = std::max(0.0, mu[g.edge(e).from]) * lam[e];
    wmax = std::max(wmax, wp[e]);
  }
  for (int z = 0; z < k; ++z) vmax = std::max(vmax, std::abs(v[z]));
  if (wmax == 0 && vmax == 0) return out;
  if (k == 2 && ne == 2 && wp[0] > 0 && wp[1] > 0) {
    int up = g.edge(0).from == 0 ? 0 : 1;
    out.value = detail::two_color_dual(wp[up], wp[1 - up], v[1], &out.potential[1]);
    return out;
  }
  if (!detail::dual_feasible(g, wp, v)) {
    out.value = infinity;
    return out;
  }
  int d = k - 1;
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(k), grad(d), step(d);
  Eigen::MatrixXd H(d, d);
  auto objective = [&](const Eigen::VectorXd& p) {
    double s = 0;
    for (int z = 0; z < k; ++z) s += v[z] * p[z];
    for (int e = 0; e < ne; ++e)
      if (wp[e] > 0) s -= wp[e] * std::expm1(p[g.edge(e).to] - p[g.edge(e).from]);
    return s;
  };
  double val = objective(phi);
  double tol = 1e-14 * std::max({1.0, wmax, vmax});
  out.converged = false;
  for (int it = 0; it < 200; ++it) {
    grad.setZero();
    H.setZero();
    for (int z = 1; z < k; ++z) grad[z - 1] = v[z];
    for (int e = 0; e < ne; ++e) {
      if (wp[e] <= 0) continue;
      int a = g.edge(e).from, b = g.edge(e).to;
      double f = wp[e] * std::exp(phi[b] - phi[a]);
      if (b > 0) grad[b - 1] -= f;
      if (a > 0) grad[a - 1] += f;
      if (a > 0) H(a - 1, a - 1) += f;
      if (b > 0) H(b - 1, b - 1) += f;
      if (a > 0 && b > 0) {
        H(a - 1, b - 1) -= f;
        H(b - 1, a - 1) -= f;
      }
    }
    if (grad.lpNorm<Eigen::Infinity>() < tol) {
      out.converged = true;
      break;
    }
    double ridge = 1e-14 * std::max(1.0, H.diagonal().maxCoeff());
    H.diagonal().array() += ridge;
    step = H.ldlt().solve(grad);
    if (!step.allFinite()) step = grad;
    // Cap the step so exponentials stay finite.
    double big = step.lpNorm<Eigen::Infinity>();
    if (big > 20) step *= 20 / big;
    double slope = grad.dot(step), a = 1;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, a *= 0.5) {
      Eigen::VectorXd trial = phi;
      trial.tail(d) += a * step;
      double tv = objective(trial);
      if (tv >= val + 1e-4 * a * slope || (ls > 50 && tv >= val)) {
        phi = trial;
        moved = tv > val || a * step.lpNorm<Eigen::Infinity>() > 1e-15;
        val = std::max(val, tv);
        break;
      }
    }
    if (!moved) {
      out.converged = grad.lpNorm<Eigen::Infinity>() < 1e-9 * std::max({1.0, wmax, vmax});
      break;
    }
    if (val > 1e12) {
      out.value = infinity;
      return out;
    }
  }
  for (int z = 0; z < k; ++z) out.potential[z] = phi[z];
  out.value = std::max(0.0, val);
  return out;
}

// Value of solve_component_dual without the potential.
inline double component_cost(const ColorGraph& g, const double* mu, const double* lam, const double* v) {
  if (g.colors() == 2 && g.edge_count() == 2) {
    int up = g.edge(0).from == 0 ? 0 : 1;
    double a = mu[0] * lam[up], b = mu[1] * lam[1 - up];
    if (a > 0 && b > 0) return detail::two_color_dual(a, b, v[1]);
  }
  return solve_component_dual(g, mu, lam, v).value;
}

struct DualDensity {
  std::vector<double> per_component;
  double weighted = 0;
};

// Minimal cost of moving with velocity v at state x, given rates at x.
inline DualDensity lagrangian(const BlockModel& m, const double* x, const double* rates, const double* v) {
  Layout l = m.layout();
  int k = l.colors, ne = m.graph.edge_count();
  DualDensity d;
  d.per_component.resize(l.components());
  for (int c = 0; c < l.components(); ++c) {
    auto sol = solve_component_dual(m.graph, x + c * k, rates + c * ne, v + c * k);
    d.per_component[c] = sol.value;
    d.weighted += m.weight(c) * sol.value;
  }
  return d;
}

// Evaluates the dual form sum_z theta(z) phi(z) - sum_z x(z) sum_z' lam tau(phi(z') - phi(z))
// at its supremum for theta = velocity - A(x)^* x.
inline DualDensity dual_action_density(const BlockModel& m, const EmpiricalVector& x, std::span<const double> theta) {
  Layout l = m.layout();
  if (!(x.layout() == l) || static_cast<int>(theta.size()) != l.size())
    throw std::invalid_argument("dual density: shape mismatch");
  RateEvaluator ev(m);
  std::vector<double> rates(l.components() * m.graph.edge_count()), a(l.size()), scratch;
  drift(m, ev, x.values().data(), a.data(), scratch);
  ev.all_rates(x.values().data(), rates.data());
  std::vector<double> v(l.size());
  for (int i = 0; i < l.size(); ++i) v[i] = theta[i] + a[i];
  return lagrangian(m, x.values().data(), rates.data(), v.data());
}

namespace detail {

inline double velocity_mismatch(const BlockModel& m, const double* mid, const double* l, const double* v) {
  Layout lay = m.layout();
  int k = lay.colors, ne = m.graph.edge_count();
  double worst = 0, scale = 1;
  std::vector<double> got(k);
  for (int c = 0; c < lay.components(); ++c) {
    std::fill(got.begin(), got.end(), 0.0);
    for (int e = 0; e < ne; ++e) {
      const Edge& ed = m.graph.edge(e);
      double rate = l[c * ne + e];
      if (mid[c * k + ed.from] == 0) continue;
      double f = mid[c * k + ed.from] * rate;
      got[ed.to] += f;
      got[ed.from] -= f;
    }
    for (int z = 0; z < k; ++z) {
      double target = v[c * k + z];
      scale = std::max(scale, std::abs(target));
      if (std::isinf(got[z])) return infinity;
      worst = std::max(worst, std::abs(got[z] - target));
    }
  }
  return worst / scale;
}

}  // namespace detail

// Midpoint-rule action of a path driven by the given rates.  Throws when the
// rates do not reproduce the path velocity at the segment midpoints.
inline double action(const BlockModel& m, const PathGrid& path, const RateMatrixPath& rates) {
  path.check();
  Layout l = m.layout();
  if (!(path.layout() == l)) throw std::invalid_argument("path does not match the model shape");
  if (static_cast<int>(rates.segments.size()) != path.segments() || rates.edges != m.graph.edge_count())
    throw std::invalid_argument("rate path does not match the path grid");
  int k = l.colors, ne = m.graph.edge_count();
  RateEvaluator ev(m);
  std::vector<double> lam(l.components() * ne);
  double total = 0;
  for (int s = 0; s < path.segments(); ++s) {
    auto mid = path.midpoint(s);
    auto v = path.velocity(s);
    const auto& ls = rates.segments[s];
    for (double r : ls)
      if (!(r >= 0)) throw std::invalid_argument("rates must be non-negative");
    double mis = detail::velocity_mismatch(m, mid.data(), ls.data(), v.data());
    if (mis > 1e-8) {
      std::ostringstream os;
      os << "rates are not velocity-consistent on segment " << s << " (mismatch " << mis << ")";
      throw std::invalid_argument(os.str());
    }
    ev.all_rates(mid.data(), lam.data());
    double seg = 0;
    for (int c = 0; c < l.components(); ++c) {
      double cs = 0;
      for (int e = 0; e < ne; ++e) {
        double mu = mid[c * k + m.graph.edge(e).from];
        double lm = lam[c * ne + e], r = ls[c * ne + e];
        if (mu == 0) continue;
        if (std::isinf(r)) return infinity;
        cs += mu * lm * legendre_tau_star(r / lm - 1);
      }
      seg += m.weight(c) * cs;
    }
    total += path.duration(s) * seg;
  }
  return total;
}

// Transport rates: deficit colors send mass to surplus colors in index order,
// routed along shortest admissible paths, at rate flux / mu(midpoint).
inline RateMatrixPath velocity_to_rates(const BlockModel& m, const PathGrid& path) {
  path.check();
  Layout l = m.layout();
  int k = l.colors, ne = m.graph.edge_count();
  RateMatrixPath out;
  out.edges = ne;
  std::vector<std::vector<std::vector<int>>> routes(k, std::vector<std::vector<int>>(k));
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) routes[a][b] = m.graph.shortest_path(a, b);
  for (int s = 0; s < path.segments(); ++s) {
    auto mid = path.midpoint(s);
    auto v = path.velocity(s);
    std::vector<double> rate(l.components() * ne, 0.0);
    for (int c = 0; c < l.components(); ++c) {
      std::vector<double> excess(k), need(k), flux(ne, 0.0);
      for (int z = 0; z < k; ++z) {
        excess[z] = std::max(0.0, -v[c * k + z]);
        need[z] = std::max(0.0, v[c * k + z]);
      }
      int a = 0, b = 0;
      while (a < k && b < k) {
        if (excess[a] <= 0) {
          ++a;
          continue;
        }
        if (need[b] <= 0) {
          ++b;
          continue;
        }
        double q = std::min(excess[a], need[b]);
        for (int e : routes[a][b]) flux[e] += q;
        excess[a] -= q;
        need[b] -= q;
      }
      for (int e = 0; e < ne; ++e) {
        if (flux[e] <= 0) continue;
        double mu = mid[c * k + m.graph.edge(e).from];
        rate[c * ne + e] = mu > 0 ? flux[e] / mu : infinity;
      }
    }
    out.segments.push_back(std::move(rate));
  }
  return out;
}

// Rates attaining the minimal cost: l_e = lam_e exp(phi(to) - phi(from)).
inline RateMatrixPath optimal_rates(const BlockModel& m, const PathGrid& path) {
  path.check();
  Layout l = m.layout();
  int k = l.colors, ne = m.graph.edge_count();
  RateEvaluator ev(m);
  RateMatrixPath out;
  out.edges = ne;
  std::vector<double> lam(l.components() * ne);
  for (int s = 0; s < path.segments(); ++s) {
    auto mid = path.midpoint(s);
    auto v = path.velocity(s);
    ev.all_rates(mid.data(), lam.data());
    std::vector<double> rate(l.components() * ne, 0.0);
    for (int c = 0; c < l.components(); ++c) {
      auto sol = solve_component_dual(m.graph, mid.data() + c * k, lam.data() + c * ne, v.data() + c * k);
      if (!std::isfinite(sol.value)) throw std::invalid_argument("segment velocity cannot be realized");
      for (int e = 0; e < ne; ++e) {
        const Edge& ed = m.graph.edge(e);
        rate[c * ne + e] = lam[c * ne + e] * std::exp(sol.potential[ed.to] - sol.potential[ed.from]);
      }
    }
    out.segments.push_back(std::move(rate));
  }
  return out;
}

// Midpoint action with the optimal rates, without building the rate path.
inline double path_action(const BlockModel& m, const PathGrid& path) {
  path.check();
  Layout l = m.layout();
  RateEvaluator ev(m);
  std::vector<double> lam(l.components() * m.graph.edge_count());
  double total = 0;
  for (int s = 0; s < path.segments(); ++s) {
    auto mid = path.midpoint(s);
    auto v = path.velocity(s);
    ev.all_rates(mid.data(), lam.data());
    total += path.duration(s) * lagrangian(m, mid.data(), lam.data(), v.data()).weighted;
  }
  return total;
}

inline PathGrid straight_path(const EmpiricalVector& from, const EmpiricalVector& to, double T, int segments) {
  if (!(T > 0) || segments < 1) throw std::invalid_argument("need T > 0 and at least one segment");
  if (!(from.layout() == to.layout())) throw std::invalid_argument("endpoints differ in shape");
  PathGrid p;
  Layout l = from.layout();
  for (int s = 0; s <= segments; ++s) {
    double w = double(s) / segments;
    std::vector<double> x(l.size());
    for (int i = 0; i < l.size(); ++i) x[i] = (1 - w) * from.values()[i] + w * to.values()[i];
    p.times.push_back(T * w);
    p.knots.push_back(EmpiricalVector::projected(l, x));
  }
  return p;
}

struct ConstantVelocityResult {
  PathGrid path;
  RateMatrixPath rates;
  double action = 0;
  double bound = 0;
};

namespace detail {

// Mean of -log u for u linear from a to b.
inline double mean_neg_log(double a, double b) {
  auto prim = [](double u) { return u > 0 ? u * std::log(u) - u : 0.0; };
  if (std::abs(b - a) < 1e-12) return a > 0 ? -std::log(0.5 * (a + b)) : infinity;
  return -(prim(b) - prim(a)) / (b - a);
}

}  // namespace detail

// Constant-velocity path nu -> xi over [0, T] with transport rates and the
// explicit upper bound C_1(T) assembled edge by edge.
inline ConstantVelocityResult constant_velocity_path(const BlockModel& m, const EmpiricalVector& nu,
                                                     const EmpiricalVector& xi, double T, int segments = 1) {
  ConstantVelocityResult r;
  r.path = straight_path(nu, xi, T, segments);
  r.rates = velocity_to_rates(m, r.path);
  r.action = action(m, r.path, r.rates);
  Layout l = m.layout();
  int k = l.colors, ne = m.graph.edge_count();
  double c = m.rates.lower_bound, C = m.rates.upper_bound;
  double logs = std::abs(std::log(c)) + std::abs(std::log(C));
  double bound = 0;
  for (int s = 0; s < r.path.segments(); ++s) {
    double dt = r.path.duration(s);
    auto mid = r.path.midpoint(s);
    const auto &a = r.path.knots[s].values(), &b = r.path.knots[s + 1].values();
    for (int comp = 0; comp < l.components(); ++comp) {
      double sum = 0;
      for (int e = 0; e < ne; ++e) {
        int z = m.graph.edge(e).from;
        double rate = r.rates(s, comp, e);
        double moved = rate > 0 ? (std::isinf(rate) ? infinity : rate * mid[comp * k + z] * dt) : 0.0;
        sum += C * dt;
        if (moved > 0) {
          sum += moved * std::abs(std::log(moved)) + moved * std::abs(std::log(dt)) +
                 moved * detail::mean_neg_log(a[comp * k + z], b[comp * k + z]) + moved * logs;
        }
      }
      bound += m.weight(comp) * sum;
    }
  }
  r.bound = bound;
  return r;
}

struct RescaleResult {
  PathGrid path;
  RateMatrixPath rates;
  double action = 0;     // recomputed on the rescaled path
  double predicted = 0;  // S + log(beta) * flux integral + (1 - beta) / beta * base integral
  double bound = 0;
};

// mu~(t) = mu(beta t) driven by beta * l.
inline RescaleResult rescale_path(const BlockModel& m, const PathGrid& path, const RateMatrixPath& rates, double beta) {
  if (!(beta > 0)) throw std::invalid_argument("beta must be positive");
  double S = action(m, path, rates);
  Layout l = m.layout();
  int k = l.colors, ne = m.graph.edge_count();
  RateEvaluator ev(m);
  std::vector<double> lam(l.components() * ne);
  double flux_int = 0, base_int = 0;
  for (int s = 0; s < path.segments(); ++s) {
    auto mid = path.midpoint(s);
    ev.all_rates(mid.data(), lam.data());
    double dt = path.duration(s);
    for (int c = 0; c < l.components(); ++c)
      for (int e = 0; e < ne; ++e) {
        double mu = mid[c * k + m.graph.edge(e).from];
        flux_int += m.weight(c) * dt * mu * rates(s, c, e);
        base_int += m.weight(c) * dt * mu * lam[c * ne + e];
      }
  }
  RescaleResult r;
  r.path = path;
  for (auto& t : r.path.times) t /= beta;
  r.rates = rates;
  for (auto& seg : r.rates.segments)
    for (auto& x : seg) x *= beta;
  r.action = action(m, r.path, r.rates);
  r.predicted = S + std::log(beta) * flux_int + (1 - beta) / beta * base_int;
  r.bound = S + std::abs(1 - beta) / beta * m.rates.upper_bound * path.horizon() * m.graph.max_out_degree() +
            std::abs(std::log(beta)) * flux_int;
  return r;
}

}  // namespace mfmeta

#endif
