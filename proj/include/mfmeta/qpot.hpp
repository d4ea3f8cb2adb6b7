#ifndef MFMETA_QPOT_HPP
#define MFMETA_QPOT_HPP

#include <boost/math/tools/minima.hpp>
#include <optional>
#include <string>

#include "action.hpp"
#include "fw.hpp"
#include "mvode.hpp"
#include "parallel.hpp"

namespace mfmeta {

// A catalog index or an explicit point.
struct Endpoint {
  int compact = -1;
  std::optional<EmpiricalVector> point;

  static Endpoint at(int i) { return Endpoint{i, std::nullopt}; }
  static Endpoint at(EmpiricalVector x) { return Endpoint{-1, std::move(x)}; }
};

struct QpotOptions {
  int initial_segments = 4;
  int segments = 32;        // refinement continues at least up to this many segments
  int max_segments = 128;
  double refine_tolerance = 0.01;
  double dt_min = 1e-6;     // range searched for each segment duration
  double dt_max = 1e4;
  int max_sweeps = 400;
  double sweep_tolerance = 1e-7;
  double floor = 1e-10;
  int threads = 1;
};

struct QpotProblem {
  BlockModel model;
  CompactCatalog catalog;
  Endpoint source, target;
  std::vector<int> avoid;
  std::vector<EmpiricalVector> via;
  QpotOptions options;
};

struct QpotDiagnostics {
  std::string start;
  int starts = 0;
  int segments = 0;
  int sweeps = 0;
  bool converged = false;
  bool stagnated = false;
  std::vector<double> level_values;
};

struct QpotResult {
  double value = infinity;
  double horizon = 0;
  PathGrid path;
  RateMatrixPath rates;
  QpotDiagnostics diagnostics;
};

namespace detail {

// Knot-path objective: each segment costs min over its duration dt of
// dt * L(midpoint, displacement / dt).
class PathObjective {
 public:
  PathObjective(const BlockModel& m, const QpotOptions& o)
      : m_(m), ev_(m), o_(o), l_(m.layout()), n_(l_.size()), k_(l_.colors), ne_(m.graph.edge_count()) {
    for (int c = 0; c < l_.components(); ++c) w_.push_back(m.weight(c));
    mid_.resize(n_);
    d_.resize(n_);
    vel_.resize(k_);
    lam_.resize(l_.components() * ne_);
  }

  void avoid(std::vector<std::vector<double>> centers, double r) {
    avoid_ = std::move(centers);
    radius_ = r;
  }

  bool blocked(const double* x) const {
    for (auto& c : avoid_)
      if (sup_distance(x, c.data(), n_) < radius_) return true;
    return false;
  }

  double segment(const double* a, const double* b, double& dt) {
    double len = 0;
    for (int i = 0; i < n_; ++i) {
      mid_[i] = 0.5 * (a[i] + b[i]);
      d_[i] = b[i] - a[i];
      len = std::max(len, std::abs(d_[i]));
    }
    if (blocked(mid_.data())) return infinity;
    if (len == 0) {
      dt = o_.dt_min;
      return 0;
    }
    ev_.all_rates(mid_.data(), lam_.data());
    auto f = [&](double logdt) {
      double t = std::exp(logdt), s = 0;
      for (int c = 0; c < l_.components(); ++c) {
        for (int z = 0; z < k_; ++z) vel_[z] = d_[c * k_ + z] / t;
        s += w_[c] * component_cost(m_.graph, mid_.data() + c * k_, lam_.data() + c * ne_, vel_.data());
      }
      double v = t * s;
      return std::isfinite(v) ? v : std::numeric_limits<double>::max();
    };
    const int bits = std::numeric_limits<double>::digits / 2;
    double full_lo = std::log(o_.dt_min), full_hi = std::log(o_.dt_max);
    double h = dt > 0 ? std::log(dt) : 0.5 * (full_lo + full_hi);
    double lo = std::max(full_lo, h - 3), hi = std::min(full_hi, h + 3);
    auto r = boost::math::tools::brent_find_minima(f, lo, hi, bits);
    if ((r.first - lo < 1e-2 && lo > full_lo) || (hi - r.first < 1e-2 && hi < full_hi))
      r = boost::math::tools::brent_find_minima(f, full_lo, full_hi, bits);
    dt = std::exp(r.first);
    return r.second >= std::numeric_limits<double>::max() ? infinity : r.second;
  }

  int size() const { return n_; }
  Layout layout() const { return l_; }

 private:
  const BlockModel& m_;
  RateEvaluator ev_;
  QpotOptions o_;
  Layout l_;
  int n_, k_, ne_;
  std::vector<double> w_, mid_, d_, vel_, lam_;
  std::vector<std::vector<double>> avoid_;
  double radius_ = 0;
};

// Endpoint constrained to the sup-metric sphere of radius r around center.
struct Sphere {
  std::vector<double> center;
  double radius = 0;

  bool project(std::vector<double>& x, double floor) const {
    double d = sup_distance(x.data(), center.data(), static_cast<int>(x.size()));
    if (d == 0) return false;
    double s = radius / d;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = center[i] + s * (x[i] - center[i]);
      if (x[i] < floor * 0.5) return false;
    }
    return true;
  }
};

using Polyline = std::vector<std::vector<double>>;

inline Polyline resample(const Polyline& p, int segments) {
  std::vector<double> arc(p.size(), 0.0);
  for (std::size_t i = 1; i < p.size(); ++i) {
    double s = 0;
    for (std::size_t q = 0; q < p[i].size(); ++q) s += (p[i][q] - p[i - 1][q]) * (p[i][q] - p[i - 1][q]);
    arc[i] = arc[i - 1] + std::sqrt(s);
  }
  Polyline out;
  out.reserve(segments + 1);
  double total = arc.back();
  std::size_t seg = 1;
  for (int s = 0; s <= segments; ++s) {
    if (s == 0) {
      out.push_back(p.front());
      continue;
    }
    if (s == segments) {
      out.push_back(p.back());
      continue;
    }
    double target = total * s / segments;
    while (seg + 1 < p.size() && arc[seg] < target) ++seg;
    double span = arc[seg] - arc[seg - 1], w = span > 0 ? (target - arc[seg - 1]) / span : 0;
    std::vector<double> x(p[seg].size());
    for (std::size_t q = 0; q < x.size(); ++q) x[q] = (1 - w) * p[seg - 1][q] + w * p[seg][q];
    out.push_back(std::move(x));
  }
  return out;
}

class KnotDescent {
 public:
  KnotDescent(PathObjective& obj, const QpotOptions& o, const Sphere* sphere) : f_(obj), o_(o), sphere_(sphere) {
    Layout l = obj.layout();
    for (int c = 0; c < l.components(); ++c)
      for (int z = 0; z < l.colors; ++z)
        for (int z2 = z + 1; z2 < l.colors; ++z2) dirs_.push_back({c * l.colors + z, c * l.colors + z2});
  }

  // Optimizes interior knots (and the last knot when a sphere is set).
  double run(Polyline& x, int& sweeps, bool& stagnated) {
    int M = static_cast<int>(x.size()) - 1;
    dt_.assign(M, 0.0);
    cost_.assign(M, 0.0);
    step_.assign(M + 1, 0.02);
    double total = 0;
    for (int s = 0; s < M; ++s) total += cost_[s] = f_.segment(x[s].data(), x[s + 1].data(), dt_[s]);
    if (!std::isfinite(total)) return infinity;
    int last = sphere_ ? M : M - 1;
    stagnated = true;
    for (sweeps = 0; sweeps < o_.max_sweeps; ++sweeps) {
      double before = total;
      for (int kn = 1; kn <= last; ++kn)
        for (auto [i, j] : dirs_) total = line_search(x, kn, i, j, total);
      if (before - total <= o_.sweep_tolerance * std::max(total, 1e-12)) {
        stagnated = false;
        ++sweeps;
        break;
      }
    }
    return total;
  }

  const std::vector<double>& durations() const { return dt_; }

 private:
  double local(const Polyline& x, int kn, std::vector<double>& y, double& dl, double& dr) {
    int M = static_cast<int>(x.size()) - 1;
    double s = f_.segment(x[kn - 1].data(), y.data(), dl);
    if (kn < M) s += f_.segment(y.data(), x[kn + 1].data(), dr);
    return s;
  }

  double line_search(Polyline& x, int kn, int i, int j, double total) {
    int M = static_cast<int>(x.size()) - 1;
    double fl = o_.floor;
    double h = step_[kn];
    double lo = std::max(-h, fl - x[kn][i]), hi = std::min(h, x[kn][j] - fl);
    if (!(hi > lo)) return total;
    double here = cost_[kn - 1] + (kn < M ? cost_[kn] : 0.0);
    std::vector<double> y;
    double dl = dt_[kn - 1], dr = kn < M ? dt_[kn] : 0.0;
    auto g = [&](double t) {
      y = x[kn];
      y[i] += t;
      y[j] -= t;
      if (sphere_ && kn == M && !sphere_->project(y, fl)) return std::numeric_limits<double>::max();
      if (f_.blocked(y.data())) return std::numeric_limits<double>::max();
      double a = dt_[kn - 1], b = kn < M ? dt_[kn] : 0.0;
      double v = local(x, kn, y, a, b);
      return std::isfinite(v) ? v : std::numeric_limits<double>::max();
    };
    auto r = boost::math::tools::brent_find_minima(g, lo, hi, 24);
    double t = r.first;
    if (r.second < here - 1e-15 * std::max(1.0, here)) {
      y = x[kn];
      y[i] += t;
      y[j] -= t;
      if (sphere_ && kn == M) sphere_->project(y, fl);
      double nl = local(x, kn, y, dl, dr);
      if (nl < here) {
        x[kn] = y;
        cost_[kn - 1] = f_.segment(x[kn - 1].data(), x[kn].data(), dt_[kn - 1]);
        double c2 = 0;
        if (kn < M) c2 = cost_[kn] = f_.segment(x[kn].data(), x[kn + 1].data(), dt_[kn]);
        total += cost_[kn - 1] + c2 - here;
      }
      step_[kn] = std::abs(t) > 0.5 * h ? std::min(2 * h, 0.5) : std::max(4 * std::abs(t), std::max(0.5 * h, 1e-9));
    } else {
      step_[kn] = std::max(0.25 * h, 1e-9);
    }
    return total;
  }

  PathObjective& f_;
  QpotOptions o_;
  const Sphere* sphere_;
  std::vector<std::pair<int, int>> dirs_;
  std::vector<double> dt_, cost_, step_;
};

inline Polyline as_polyline(std::initializer_list<const EmpiricalVector*> pts) {
  Polyline p;
  for (auto* e : pts) p.push_back(e->values());
  return p;
}

// Coarse-to-fine descent from one starting polyline.
inline QpotResult descend(const BlockModel& m, const QpotOptions& o, const Polyline& start,
                          const std::vector<std::vector<double>>& avoid, double radius, const Sphere* sphere,
                          const std::string& label) {
  PathObjective f(m, o);
  f.avoid(avoid, radius);
  KnotDescent kd(f, o, sphere);
  Layout l = m.layout();
  QpotResult res;
  res.diagnostics.start = label;
  res.diagnostics.starts = 1;
  int M = std::max(1, o.initial_segments);
  Polyline x = resample(start, M);
  for (std::size_t s = 1; s + 1 < x.size(); ++s) x[s] = EmpiricalVector::projected(l, x[s], o.floor).values();
  double prev = infinity, value = infinity;
  Polyline best;
  std::vector<double> best_dt;
  for (;;) {
    int sweeps = 0;
    bool stag = false;
    value = kd.run(x, sweeps, stag);
    res.diagnostics.level_values.push_back(value);
    res.diagnostics.sweeps += sweeps;
    res.diagnostics.stagnated = stag;
    if (!std::isfinite(value)) break;
    best = x;
    best_dt = kd.durations();
    res.diagnostics.segments = M;
    if (M >= o.segments && std::abs(prev - value) <= o.refine_tolerance * value) {
      res.diagnostics.converged = true;
      break;
    }
    if (M >= o.max_segments) break;
    prev = value;
    Polyline fine;
    for (int s = 0; s < M; ++s) {
      fine.push_back(x[s]);
      std::vector<double> h(x[s].size());
      for (std::size_t q = 0; q < h.size(); ++q) h[q] = 0.5 * (x[s][q] + x[s + 1][q]);
      fine.push_back(h);
    }
    fine.push_back(x[M]);
    M *= 2;
    Polyline even = resample(fine, M);
    bool ok = true;
    for (auto& p : even)
      if (f.blocked(p.data())) ok = false;
    x = ok ? even : fine;
  }
  if (best.empty()) return res;
  res.path.times.push_back(0);
  for (std::size_t s = 0; s < best.size(); ++s) {
    if (s > 0) res.path.times.push_back(res.path.times.back() + best_dt[s - 1]);
    bool inner = s > 0 && (s + 1 < best.size() || sphere);
    res.path.knots.push_back(inner ? EmpiricalVector::projected(l, best[s]) : EmpiricalVector(l.blocks, l.colors, best[s]));
  }
  res.rates = optimal_rates(m, res.path);
  res.value = action(m, res.path, res.rates);
  res.horizon = res.path.horizon();
  return res;
}

inline QpotResult pick_best(std::vector<QpotResult>& runs) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(runs.size()); ++i)
    if (std::isfinite(runs[i].value) && (best < 0 || runs[i].value < runs[best].value)) best = i;
  if (best < 0) {
    QpotResult r;
    r.diagnostics.starts = static_cast<int>(runs.size());
    r.diagnostics.stagnated = true;
    return r;
  }
  QpotResult r = std::move(runs[best]);
  r.diagnostics.starts = static_cast<int>(runs.size());
  return r;
}

inline const EmpiricalVector& resolve(const QpotProblem& p, const Endpoint& e) {
  if (e.point) return *e.point;
  if (e.compact < 0 || e.compact >= static_cast<int>(p.catalog.size()))
    throw std::invalid_argument("endpoint refers to a compact outside the catalog");
  return p.catalog.points[e.compact].point;
}

}  // namespace detail

// Local minimum of the action between two points over piecewise-linear
// paths; multi-start from the straight line, each via point and seed_path.
inline QpotResult minimize_action(const QpotProblem& p, const std::optional<PathGrid>& seed_path = std::nullopt) {
  const QpotOptions& o = p.options;
  if (o.initial_segments < 1 || o.segments < 4) throw std::invalid_argument("qpot: need at least 4 segments");
  const EmpiricalVector& from = detail::resolve(p, p.source);
  const EmpiricalVector& to = detail::resolve(p, p.target);
  Layout l = p.model.layout();
  if (!(from.layout() == l) || !(to.layout() == l)) throw std::invalid_argument("qpot: endpoint shape mismatch");
  std::vector<std::vector<double>> avoid;
  for (int k : p.avoid) {
    if (k == p.source.compact || k == p.target.compact) throw std::invalid_argument("qpot: avoid list contains an endpoint");
    if (k < 0 || k >= static_cast<int>(p.catalog.size())) throw std::invalid_argument("qpot: avoid index out of range");
    avoid.push_back(p.catalog.points[k].point.values());
  }
  if (product_metric(from, to) == 0) {
    QpotResult r;
    r.value = 0;
    r.path.times = {0, o.dt_min};
    r.path.knots = {from, to};
    r.rates = optimal_rates(p.model, r.path);
    r.diagnostics.converged = true;
    r.diagnostics.start = "degenerate";
    return r;
  }
  std::vector<std::pair<detail::Polyline, std::string>> starts;
  starts.push_back({detail::as_polyline({&from, &to}), "straight"});
  for (std::size_t v = 0; v < p.via.size(); ++v)
    starts.push_back({detail::as_polyline({&from, &p.via[v], &to}), "via " + std::to_string(v)});
  if (seed_path) {
    detail::Polyline s;
    for (auto& k : seed_path->knots) s.push_back(k.values());
    s.front() = from.values();
    s.back() = to.values();
    starts.push_back({s, "seed"});
  }
  std::vector<QpotResult> runs(starts.size());
  parallel_for(static_cast<int>(starts.size()), o.threads, [&](int i) {
    runs[i] = detail::descend(p.model, o, starts[i].first, avoid, p.catalog.r0, nullptr, starts[i].second);
  });
  return detail::pick_best(runs);
}

inline QpotResult quasipotential(const BlockModel& m, const EmpiricalVector& from, const EmpiricalVector& to,
                                 const QpotOptions& o = {}, std::vector<EmpiricalVector> via = {}) {
  QpotProblem p{m, {}, Endpoint::at(from), Endpoint::at(to), {}, std::move(via), o};
  return minimize_action(p);
}

// Cheapest way to reach the sup-metric sphere of radius r around center.
inline QpotResult exit_cost(const BlockModel& m, const EmpiricalVector& center, double r, const QpotOptions& o = {}) {
  Layout l = m.layout();
  detail::Sphere sphere{center.values(), r};
  std::vector<std::pair<detail::Polyline, std::string>> starts;
  auto add = [&](std::vector<double> y, const std::string& label) {
    for (double v : y)
      if (v < o.floor) return;
    starts.push_back({{center.values(), y}, label});
  };
  for (int z = 0; z < l.colors; ++z)
    for (int z2 = 0; z2 < l.colors; ++z2) {
      if (z == z2) continue;
      std::vector<double> all = center.values();
      for (int c = 0; c < l.components(); ++c) {
        std::vector<double> one = center.values();
        one[c * l.colors + z] += r;
        one[c * l.colors + z2] -= r;
        all[c * l.colors + z] += r;
        all[c * l.colors + z2] -= r;
        add(one, "component " + std::to_string(c) + " " + std::to_string(z2) + "->" + std::to_string(z));
      }
      add(all, "all " + std::to_string(z2) + "->" + std::to_string(z));
    }
  if (starts.empty()) throw std::invalid_argument("exit_cost: sphere leaves the simplex in every direction");
  std::vector<QpotResult> runs(starts.size());
  parallel_for(static_cast<int>(starts.size()), o.threads, [&](int i) {
    runs[i] = detail::descend(m, o, starts[i].first, {}, 0.0, &sphere, starts[i].second);
  });
  return detail::pick_best(runs);
}

enum class CostMode { direct, avoiding };

struct CompactCosts {
  CostMatrix matrix;
  std::vector<char> flagged;       // n*n, set when the optimizer stagnated or found no admissible path
  std::vector<double> horizons;    // n*n
};

// Pairwise costs between the catalog points; via points seed extra starts.
inline CompactCosts compact_cost_matrix(const BlockModel& m, const CompactCatalog& catalog, CostMode mode,
                                        const QpotOptions& o = {}, const std::vector<EmpiricalVector>& via = {}) {
  int n = static_cast<int>(catalog.size());
  if (n < 2) throw std::invalid_argument("cost matrix needs at least two compacts");
  CompactCosts out{CostMatrix(n), std::vector<char>(n * n, 0), std::vector<double>(n * n, 0.0)};
  QpotOptions inner = o;
  inner.threads = 1;
  parallel_for(n * n, o.threads, [&](int q) {
    int i = q / n, j = q % n;
    if (i == j) return;
    QpotProblem p{m, catalog, Endpoint::at(i), Endpoint::at(j), {}, via, inner};
    if (mode == CostMode::avoiding)
      for (int k = 0; k < n; ++k)
        if (k != i && k != j) p.avoid.push_back(k);
    QpotResult r = minimize_action(p);
    out.matrix(i, j) = r.value;
    out.horizons[q] = r.horizon;
    out.flagged[q] = !std::isfinite(r.value) || r.diagnostics.stagnated || !r.diagnostics.converged;
  });
  return out;
}

inline std::vector<EmpiricalVector> saddle_points(const CompactCatalog& c) {
  std::vector<EmpiricalVector> s;
  for (auto& p : c.points)
    if (!p.stable) s.push_back(p.point);
  return s;
}

}  // namespace mfmeta

#endif
