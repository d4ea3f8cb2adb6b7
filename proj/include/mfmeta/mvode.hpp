#ifndef MFMETA_MVODE_HPP
#define MFMETA_MVODE_HPP

#include <Eigen/Dense>

#include "model.hpp"
#include "sim.hpp"

namespace mfmeta {

// out = A(x)^* x, one generator per component.
inline void drift(const BlockModel& m, const RateEvaluator& ev, const double* x, double* out,
                  std::vector<double>& rates) {
  Layout l = m.layout();
  int k = l.colors, ne = m.graph.edge_count();
  rates.resize(l.components() * ne);
  ev.all_rates(x, rates.data());
  std::fill(out, out + l.size(), 0.0);
  for (int c = 0; c < l.components(); ++c)
    for (int e = 0; e < ne; ++e) {
      const Edge& ed = m.graph.edge(e);
      double f = x[c * k + ed.from] * rates[c * ne + e];
      out[c * k + ed.to] += f;
      out[c * k + ed.from] -= f;
    }
}

inline std::vector<double> vector_field(const BlockModel& m, const EmpiricalVector& x) {
  if (!(x.layout() == m.layout())) throw std::invalid_argument("state does not match the model shape");
  RateEvaluator ev(m);
  std::vector<double> out(x.layout().size()), scratch;
  drift(m, ev, x.values().data(), out.data(), scratch);
  return out;
}

enum class Direction { forward, reversed };

struct OdeSolution {
  double dt = 0;
  std::vector<double> times;
  std::vector<EmpiricalVector> states;

  // Linear interpolation between grid states.
  std::vector<double> at(double t) const {
    if (t <= times.front()) return states.front().values();
    if (t >= times.back()) return states.back().values();
    std::size_t i = static_cast<std::size_t>((t - times.front()) / dt);
    i = std::min(i, times.size() - 2);
    while (i + 1 < times.size() - 1 && times[i + 1] < t) ++i;
    while (i > 0 && times[i] > t) --i;
    double w = (t - times[i]) / (times[i + 1] - times[i]);
    std::vector<double> out(states[i].values().size());
    for (std::size_t q = 0; q < out.size(); ++q) out[q] = (1 - w) * states[i].values()[q] + w * states[i + 1].values()[q];
    return out;
  }
};

// Fixed-step RK4 with renormalization after each step.
inline OdeSolution integrate(const BlockModel& m, const EmpiricalVector& nu, double T, double dt,
                             Direction dir = Direction::forward) {
  if (!(dt > 0) || !(T >= 0)) throw std::invalid_argument("need dt > 0 and T >= 0");
  if (!(nu.layout() == m.layout())) throw std::invalid_argument("state does not match the model shape");
  RateEvaluator ev(m);
  Layout l = m.layout();
  int n = l.size();
  long steps = std::max(1L, static_cast<long>(std::ceil(T / dt - 1e-9)));
  if (T == 0) steps = 0;
  double h = steps ? T / steps : dt;
  double sign = dir == Direction::forward ? 1.0 : -1.0;
  OdeSolution sol;
  sol.dt = h;
  sol.times.reserve(steps + 1);
  sol.states.reserve(steps + 1);
  sol.times.push_back(0);
  sol.states.push_back(nu);
  std::vector<double> x = nu.values(), k1(n), k2(n), k3(n), k4(n), y(n), scratch;
  for (long s = 0; s < steps; ++s) {
    drift(m, ev, x.data(), k1.data(), scratch);
    for (int i = 0; i < n; ++i) y[i] = x[i] + 0.5 * h * sign * k1[i];
    drift(m, ev, y.data(), k2.data(), scratch);
    for (int i = 0; i < n; ++i) y[i] = x[i] + 0.5 * h * sign * k2[i];
    drift(m, ev, y.data(), k3.data(), scratch);
    for (int i = 0; i < n; ++i) y[i] = x[i] + h * sign * k3[i];
    drift(m, ev, y.data(), k4.data(), scratch);
    for (int i = 0; i < n; ++i) x[i] += h * sign * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) / 6;
    double lo = *std::min_element(x.begin(), x.end());
    if (lo < -1e-6) {
      std::ostringstream os;
      os << "integration left the simplex at t=" << (s + 1) * h << " (entry " << lo << ")";
      throw std::runtime_error(os.str());
    }
    EmpiricalVector next = EmpiricalVector::projected(l, x);
    x = next.values();
    sol.times.push_back((s + 1) * h);
    sol.states.push_back(std::move(next));
  }
  return sol;
}

struct FixedPoint {
  EmpiricalVector point;
  bool stable = false;
  double spectral_abscissa = 0;
};

struct CompactCatalog {
  std::vector<FixedPoint> points;
  double r0 = 0;
  double r1 = 0;

  std::size_t size() const { return points.size(); }
  CompactCatalog stable_only() const {
    CompactCatalog c = *this;
    c.points.clear();
    for (auto& p : points)
      if (p.stable) c.points.push_back(p);
    return c;
  }
  CompactBalls balls() const {
    CompactBalls b;
    for (auto& p : points) b.centers.push_back(p.point);
    b.r0 = r0;
    b.r1 = r1;
    return b;
  }
  double min_separation() const {
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t j = i + 1; j < points.size(); ++j) d = std::min(d, product_metric(points[i].point, points[j].point));
    return d;
  }
};

namespace detail {

inline std::vector<double> reduce(const std::vector<double>& x, Layout l) {
  std::vector<double> y;
  for (int c = 0; c < l.components(); ++c)
    for (int z = 0; z + 1 < l.colors; ++z) y.push_back(x[c * l.colors + z]);
  return y;
}

inline std::vector<double> expand(const Eigen::VectorXd& y, Layout l) {
  std::vector<double> x(l.size());
  int q = 0;
  for (int c = 0; c < l.components(); ++c) {
    double s = 0;
    for (int z = 0; z + 1 < l.colors; ++z) s += (x[c * l.colors + z] = y[q++]);
    x[c * l.colors + l.colors - 1] = 1 - s;
  }
  return x;
}

}  // namespace detail

// Jacobian of the drift in the coordinates that drop the last color of each component.
inline Eigen::MatrixXd tangent_jacobian(const BlockModel& m, const std::vector<double>& x) {
  Layout l = m.layout();
  RateEvaluator ev(m);
  auto y0v = detail::reduce(x, l);
  int d = static_cast<int>(y0v.size());
  Eigen::VectorXd y0 = Eigen::Map<Eigen::VectorXd>(y0v.data(), d);
  std::vector<double> f(l.size()), scratch;
  auto reduced_field = [&](const Eigen::VectorXd& y) {
    auto xx = detail::expand(y, l);
    drift(m, ev, xx.data(), f.data(), scratch);
    Eigen::VectorXd out(d);
    auto r = detail::reduce(f, l);
    for (int i = 0; i < d; ++i) out[i] = r[i];
    return out;
  };
  Eigen::MatrixXd J(d, d);
  const double h = 1e-6;
  for (int i = 0; i < d; ++i) {
    Eigen::VectorXd yp = y0, ym = y0;
    yp[i] += h;
    ym[i] -= h;
    J.col(i) = (reduced_field(yp) - reduced_field(ym)) / (2 * h);
  }
  return J;
}

inline double spectral_abscissa(const Eigen::MatrixXd& J) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(J, false);
  return es.eigenvalues().real().maxCoeff();
}

struct EquilibriumOptions {
  double horizon = 200;
  double dt = 0.01;
  double r0 = 0;  // 0 selects a quarter of the minimum separation
  double r1 = 0;  // 0 selects r0 / 2
  double residual_tolerance = 1e-12;
  double merge_tolerance = 1e-6;
  bool newton_from_seeds = true;
};

// Damped Newton on the drift; nullopt when it does not converge.
inline std::optional<std::vector<double>> refine_fixed_point(const BlockModel& m, std::vector<double> x,
                                                             double tol = 1e-12) {
  Layout l = m.layout();
  RateEvaluator ev(m);
  std::vector<double> f(l.size()), scratch;
  auto resid = [&](const std::vector<double>& xx) {
    drift(m, ev, xx.data(), f.data(), scratch);
    double s = 0;
    for (double v : f) s = std::max(s, std::abs(v));
    return s;
  };
  double r = resid(x);
  for (int it = 0; it < 100 && r > tol; ++it) {
    Eigen::MatrixXd J = tangent_jacobian(m, x);
    auto fr = detail::reduce(f, l);
    Eigen::VectorXd F = Eigen::Map<Eigen::VectorXd>(fr.data(), static_cast<int>(fr.size()));
    Eigen::VectorXd step = J.fullPivLu().solve(-F);
    if (!step.allFinite()) return std::nullopt;
    auto yv = detail::reduce(x, l);
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(yv.data(), static_cast<int>(yv.size()));
    double a = 1;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls, a *= 0.5) {
      auto xn = detail::expand(y + a * step, l);
      if (*std::min_element(xn.begin(), xn.end()) < -1e-12) continue;
      double rn = resid(xn);
      if (rn < r || rn <= tol) {
        x = xn;
        r = rn;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  resid(x);
  if (r > std::max(tol, 1e-10)) return std::nullopt;
  for (auto& v : x) v = std::max(v, 0.0);
  return x;
}

// Corners (every component at one color) and the uniform vector.
inline std::vector<EmpiricalVector> default_seeds(const BlockModel& m) {
  Layout l = m.layout();
  std::vector<EmpiricalVector> s;
  for (int z = 0; z < l.colors; ++z) {
    std::vector<double> nu(l.colors, 0.0);
    nu[z] = 1;
    s.push_back(EmpiricalVector::replicate(l.blocks, nu));
  }
  s.push_back(EmpiricalVector::uniform(l.blocks, l.colors));
  return s;
}

inline CompactCatalog find_equilibria(const BlockModel& m, std::vector<EmpiricalVector> seeds,
                                      const EquilibriumOptions& opt = {}) {
  if (seeds.empty()) seeds = default_seeds(m);
  Layout l = m.layout();
  std::vector<std::vector<double>> found;
  auto add = [&](const std::vector<double>& x) {
    for (auto& f : found)
      if (sup_distance(f.data(), x.data(), l.size()) < opt.merge_tolerance) return;
    found.push_back(x);
  };
  for (auto& s : seeds) {
    auto sol = integrate(m, s, opt.horizon, opt.dt);
    if (auto x = refine_fixed_point(m, sol.states.back().values(), opt.residual_tolerance)) add(*x);
    if (opt.newton_from_seeds)
      if (auto x = refine_fixed_point(m, s.values(), opt.residual_tolerance)) add(*x);
  }
  CompactCatalog cat;
  for (auto& x : found) {
    FixedPoint fp;
    fp.point = EmpiricalVector::projected(l, x);
    fp.spectral_abscissa = spectral_abscissa(tangent_jacobian(m, fp.point.values()));
    fp.stable = fp.spectral_abscissa < -1e-9;
    cat.points.push_back(std::move(fp));
  }
  // Stable points first, then lexicographic order for reproducible labels.
  std::stable_sort(cat.points.begin(), cat.points.end(), [](const FixedPoint& a, const FixedPoint& b) {
    if (a.stable != b.stable) return a.stable;
    return a.point.values() < b.point.values();
  });
  double sep = cat.min_separation();
  cat.r0 = opt.r0 > 0 ? opt.r0 : (std::isfinite(sep) ? 0.25 * sep : 0.1);
  cat.r1 = opt.r1 > 0 ? opt.r1 : cat.r0 / 2;
  if (!(cat.r1 < cat.r0)) throw std::invalid_argument("need r1 < r0");
  if (std::isfinite(sep) && !(sep > 2 * cat.r0))
    throw std::invalid_argument("r0 too large relative to the separation of the fixed points");
  return cat;
}

}  // namespace mfmeta

#endif
