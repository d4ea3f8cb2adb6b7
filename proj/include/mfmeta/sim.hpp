#ifndef MFMETA_SIM_HPP
#define MFMETA_SIM_HPP

#include <functional>
#include <numeric>

#include "model.hpp"
#include "rng.hpp"

namespace mfmeta {

struct PopulationCounts {
  Layout layout;
  std::vector<int> sizes;   // nodes per component
  std::vector<int> counts;  // [comp * K + z]

  int total() const { return std::accumulate(sizes.begin(), sizes.end(), 0); }
  int operator()(int comp, int z) const { return counts[comp * layout.colors + z]; }
  std::vector<double> fractions() const {
    std::vector<double> f(counts.size());
    for (int c = 0; c < layout.components(); ++c)
      for (int z = 0; z < layout.colors; ++z) f[c * layout.colors + z] = double(counts[c * layout.colors + z]) / sizes[c];
    return f;
  }
  EmpiricalVector empirical() const { return EmpiricalVector(layout.blocks, layout.colors, fractions()); }
  bool operator==(const PopulationCounts&) const = default;
};

// Rounds total * w to integers summing to total; larger remainders first,
// ties to the lower index.
inline std::vector<int> largest_remainder(std::span<const double> w, int total) {
  int n = static_cast<int>(w.size());
  std::vector<int> out(n);
  std::vector<double> rem(n);
  int used = 0;
  for (int i = 0; i < n; ++i) {
    double t = total * w[i];
    out[i] = static_cast<int>(std::floor(t + 1e-12));
    rem[i] = t - out[i];
    used += out[i];
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; used < total; ++k, ++used) out[order[k % n]] += 1;
  for (int k = n - 1; used > total; --k, --used) out[order[(k % n + n) % n]] -= 1;
  return out;
}

inline PopulationCounts counts_from_fractions(const BlockModel& m, const EmpiricalVector& nu, int N) {
  Layout l = m.layout();
  if (!(nu.layout() == l)) throw std::invalid_argument("initial measure does not match the model shape");
  if (N < l.components()) throw std::invalid_argument("N too small to give every category a node");
  std::vector<double> share(l.components());
  for (int c = 0; c < l.components(); ++c) share[c] = m.weight(c);
  PopulationCounts pc;
  pc.layout = l;
  pc.sizes = largest_remainder(share, N);
  for (int c = 0; c < l.components(); ++c)
    if (pc.sizes[c] < 1) throw std::invalid_argument("N too small to give every category a node");
  pc.counts.resize(l.size());
  for (int c = 0; c < l.components(); ++c) {
    auto k = largest_remainder(nu.component(c), pc.sizes[c]);
    std::copy(k.begin(), k.end(), pc.counts.begin() + c * l.colors);
  }
  return pc;
}

struct Event {
  double time = 0;
  int block = 0;
  Category category = Category::central;
  int from = 0;
  int to = 0;
  int component() const { return Layout::component(block, category); }
};

struct TrajectoryRecord {
  PopulationCounts initial;
  double horizon = 0;
  std::vector<Event> events;
  bool budget_exhausted = false;
};

// Aggregated Gillespie direct method over (block, category, edge) channels.
class JumpProcess {
 public:
  JumpProcess(const BlockModel& m, PopulationCounts init, std::uint64_t seed)
      : graph_(&m.graph), eval_(m), pc_(std::move(init)), rng_(seed) {
    Layout l = m.layout();
    if (!(pc_.layout == l)) throw std::invalid_argument("initial counts do not match the model shape");
    for (int c = 0; c < l.components(); ++c) {
      int s = 0;
      for (int z = 0; z < l.colors; ++z) {
        if (pc_(c, z) < 0) throw std::invalid_argument("negative count");
        s += pc_(c, z);
      }
      if (s != pc_.sizes[c] || s < 1) throw std::invalid_argument("counts do not match category sizes");
    }
    k_ = l.colors;
    ne_ = m.graph.edge_count();
    frac_ = pc_.fractions();
    rates_.resize(l.components() * ne_);
    prop_.resize(rates_.size());
    from_.resize(ne_);
    for (int e = 0; e < ne_; ++e) from_[e] = m.graph.edge(e).from;
  }

  double time() const { return t_; }
  const PopulationCounts& counts() const { return pc_; }
  const std::vector<double>& fractions() const { return frac_; }
  std::uint64_t events() const { return n_; }

  // Next event before the horizon, or nullopt (time is then set to the horizon).
  std::optional<Event> advance(double horizon) {
    eval_.all_rates(frac_.data(), rates_.data());
    double a0 = 0;
    int nch = pc_.layout.components() * ne_;
    for (int i = 0; i < nch; ++i) {
      prop_[i] = pc_.counts[(i / ne_) * k_ + from_[i % ne_]] * rates_[i];
      a0 += prop_[i];
    }
    if (!(a0 > 0)) {
      t_ = horizon;
      return std::nullopt;
    }
    double dt = rng_.exponential() / a0;
    if (t_ + dt > horizon) {
      t_ = horizon;
      return std::nullopt;
    }
    t_ += dt;
    double u = rng_.uniform() * a0;
    int pick = -1;
    for (int i = 0; i < nch; ++i) {
      if (prop_[i] <= 0) continue;
      pick = i;
      if (u < prop_[i]) break;
      u -= prop_[i];
    }
    int pick_c = pick / ne_, pick_e = pick % ne_;
    const Edge& ed = graph_->edge(pick_e);
    apply(pick_c, ed.from, ed.to);
    ++n_;
    return Event{t_, Layout::block_of(pick_c), Layout::category_of(pick_c), ed.from, ed.to};
  }

 private:
  void apply(int c, int from, int to) {
    --pc_.counts[c * k_ + from];
    ++pc_.counts[c * k_ + to];
    double inv = 1.0 / pc_.sizes[c];
    frac_[c * k_ + from] = pc_.counts[c * k_ + from] * inv;
    frac_[c * k_ + to] = pc_.counts[c * k_ + to] * inv;
  }

  const ColorGraph* graph_;
  RateEvaluator eval_;
  PopulationCounts pc_;
  Philox4x32 rng_;
  std::vector<double> frac_, rates_, prop_;
  std::vector<int> from_;
  int k_ = 0, ne_ = 0;
  double t_ = 0;
  std::uint64_t n_ = 0;
};

inline TrajectoryRecord simulate(const BlockModel& m, const PopulationCounts& init, double T, std::uint64_t seed,
                                 std::uint64_t max_events = 0) {
  if (!(T >= 0)) throw std::invalid_argument("horizon must be non-negative");
  TrajectoryRecord rec;
  rec.initial = init;
  rec.horizon = T;
  JumpProcess p(m, init, seed);
  while (auto ev = p.advance(T)) {
    rec.events.push_back(*ev);
    if (max_events && rec.events.size() >= max_events) {
      rec.budget_exhausted = true;
      rec.horizon = ev->time;
      break;
    }
  }
  return rec;
}

// Reference simulator that tracks each node; O(N) work per event.
inline TrajectoryRecord simulate_per_node(const BlockModel& m, const PopulationCounts& init, double T,
                                          std::uint64_t seed) {
  Layout l = m.layout();
  int k = l.colors, ne = m.graph.edge_count();
  std::vector<int> comp_of, color_of;
  for (int c = 0; c < l.components(); ++c)
    for (int z = 0; z < k; ++z)
      for (int i = 0; i < init(c, z); ++i) {
        comp_of.push_back(c);
        color_of.push_back(z);
      }
  RateEvaluator ev(m);
  PopulationCounts pc = init;
  std::vector<double> frac = pc.fractions(), rates(l.components() * ne);
  Philox4x32 rng(seed);
  TrajectoryRecord rec;
  rec.initial = init;
  rec.horizon = T;
  double t = 0;
  int n = static_cast<int>(comp_of.size());
  std::vector<double> node_rate(n);
  for (;;) {
    ev.all_rates(frac.data(), rates.data());
    double a0 = 0;
    for (int i = 0; i < n; ++i) {
      double s = 0;
      for (int e : m.graph.out_edges(color_of[i])) s += rates[comp_of[i] * ne + e];
      node_rate[i] = s;
      a0 += s;
    }
    if (!(a0 > 0)) break;
    double dt = rng.exponential() / a0;
    if (t + dt > T) break;
    t += dt;
    double u = rng.uniform() * a0;
    int who = n - 1;
    for (int i = 0; i < n; ++i) {
      if (u < node_rate[i]) {
        who = i;
        break;
      }
      u -= node_rate[i];
    }
    int c = comp_of[who], z = color_of[who];
    const auto& outs = m.graph.out_edges(z);
    int pick = outs.back();
    for (int e : outs) {
      double r = rates[c * ne + e];
      if (u < r) {
        pick = e;
        break;
      }
      u -= r;
    }
    int to = m.graph.edge(pick).to;
    color_of[who] = to;
    --pc.counts[c * k + z];
    ++pc.counts[c * k + to];
    frac[c * k + z] = double(pc.counts[c * k + z]) / pc.sizes[c];
    frac[c * k + to] = double(pc.counts[c * k + to]) / pc.sizes[c];
    rec.events.push_back({t, Layout::block_of(c), Layout::category_of(c), z, to});
  }
  return rec;
}

// Steps a recorded trajectory forward event by event.
class PathReplay {
 public:
  explicit PathReplay(const TrajectoryRecord& rec) : rec_(&rec), pc_(rec.initial), frac_(rec.initial.fractions()) {}

  const PopulationCounts& counts() const { return pc_; }
  const std::vector<double>& fractions() const { return frac_; }
  std::size_t position() const { return next_; }
  bool done() const { return next_ >= rec_->events.size(); }
  double next_time() const {
    return done() ? std::numeric_limits<double>::infinity() : rec_->events[next_].time;
  }
  const Event& step() {
    const Event& e = rec_->events[next_++];
    int k = pc_.layout.colors, c = e.component();
    --pc_.counts[c * k + e.from];
    ++pc_.counts[c * k + e.to];
    frac_[c * k + e.from] = double(pc_.counts[c * k + e.from]) / pc_.sizes[c];
    frac_[c * k + e.to] = double(pc_.counts[c * k + e.to]) / pc_.sizes[c];
    return e;
  }
  // Applies every event with time <= t.
  void advance_to(double t) {
    while (!done() && rec_->events[next_].time <= t) step();
  }

 private:
  const TrajectoryRecord* rec_;
  PopulationCounts pc_;
  std::vector<double> frac_;
  std::size_t next_ = 0;
};

// Right-continuous: events at exactly t are included.
inline EmpiricalVector empirical_at(const TrajectoryRecord& rec, double t) {
  if (t < 0 || t > rec.horizon) throw std::invalid_argument("time outside the recorded horizon");
  PathReplay rp(rec);
  rp.advance_to(t);
  return rp.counts().empirical();
}

// Point compacts with the neighbourhoods used for the stopping times:
// gamma_i is the closed r1-ball, C the complement of the open r0-balls.
struct CompactBalls {
  std::vector<EmpiricalVector> centers;
  double r0 = 0;
  double r1 = 0;

  int gamma_index(const double* x) const {
    for (std::size_t i = 0; i < centers.size(); ++i)
      if (sup_distance(x, centers[i].values().data(), centers[i].layout().size()) <= r1) return static_cast<int>(i);
    return -1;
  }
  bool in_c(const double* x) const {
    for (auto& c : centers)
      if (sup_distance(x, c.values().data(), c.layout().size()) < r0) return false;
    return true;
  }
};

struct ChainStep {
  double sigma = 0;  // entry time into C
  double tau = 0;    // following entry time into some gamma
  int compact = -1;
};

struct HittingChain {
  int start = -1;
  std::vector<ChainStep> steps;
  bool budget_exhausted = false;
  std::uint64_t events = 0;
  double end_time = 0;
};

// Extracts the chain Z_n from a stream of states.
class HittingTracker {
 public:
  HittingTracker(const CompactBalls& b, const double* initial) : balls_(&b) {
    if (!(b.r1 > 0 && b.r1 < b.r0)) throw std::invalid_argument("need 0 < r1 < r0");
    start_ = b.gamma_index(initial);
    if (start_ < 0) throw std::invalid_argument("initial state is not inside any gamma_i");
  }

  int start() const { return start_; }
  const std::vector<ChainStep>& steps() const { return steps_; }

  // State after a jump at time t.  Returns true when a chain step completes.
  bool observe(double t, const double* x) {
    if (!seeking_gamma_) {
      if (balls_->in_c(x)) {
        seeking_gamma_ = true;
        sigma_ = t;
      }
      return false;
    }
    int i = balls_->gamma_index(x);
    if (i < 0) return false;
    steps_.push_back({sigma_, t, i});
    seeking_gamma_ = false;
    return true;
  }

 private:
  const CompactBalls* balls_;
  int start_ = -1;
  bool seeking_gamma_ = false;
  double sigma_ = 0;
  std::vector<ChainStep> steps_;
};

inline HittingChain hitting_chain(const BlockModel& m, const PopulationCounts& init, const CompactBalls& balls,
                                  std::uint64_t max_events, std::uint64_t seed, std::size_t max_steps = 0,
                                  double horizon = std::numeric_limits<double>::infinity()) {
  JumpProcess p(m, init, seed);
  HittingTracker tr(balls, p.fractions().data());
  HittingChain out;
  out.start = tr.start();
  for (;;) {
    if (max_steps && tr.steps().size() >= max_steps) break;
    if (p.events() >= max_events) {
      out.budget_exhausted = true;
      break;
    }
    auto ev = p.advance(horizon);
    if (!ev) break;
    tr.observe(ev->time, p.fractions().data());
  }
  out.steps = tr.steps();
  out.events = p.events();
  out.end_time = p.time();
  return out;
}

struct ExitResult {
  double time = 0;
  std::uint64_t events = 0;
  bool budget_exhausted = false;
};

using DomainTest = std::function<bool(const double*)>;

// First event time at which the state leaves the domain.
inline ExitResult exit_time(const BlockModel& m, const PopulationCounts& init, const DomainTest& inside,
                            std::uint64_t seed, std::uint64_t max_events) {
  JumpProcess p(m, init, seed);
  ExitResult r;
  if (!inside(p.fractions().data())) return r;
  const double inf = std::numeric_limits<double>::infinity();
  while (p.events() < max_events) {
    auto ev = p.advance(inf);
    if (!ev) {
      r.time = inf;
      r.events = p.events();
      return r;
    }
    if (!inside(p.fractions().data())) {
      r.time = ev->time;
      r.events = p.events();
      return r;
    }
  }
  r.time = p.time();
  r.events = p.events();
  r.budget_exhausted = true;
  return r;
}

// Open ball of radius r around center.
inline DomainTest ball_domain(const EmpiricalVector& center, double r) {
  std::vector<double> c = center.values();
  return [c, r](const double* x) { return sup_distance(x, c.data(), static_cast<int>(c.size())) < r; };
}

struct LogLikelihood {
  double total = 0;
  std::vector<double> per_component;
};

// log of the density of the path law under m with respect to the process in
// which every (node, admissible edge) pair carries an independent unit-rate
// clock.  Equals N times the rate functional h evaluated on the path.
inline LogLikelihood path_log_likelihood(const TrajectoryRecord& rec, const BlockModel& m) {
  Layout l = m.layout();
  if (!(rec.initial.layout == l)) throw std::invalid_argument("record does not match the model shape");
  int k = l.colors, ne = m.graph.edge_count(), comps = l.components();
  RateEvaluator ev(m);
  std::vector<double> rates(comps * ne);
  LogLikelihood out;
  out.per_component.assign(comps, 0.0);
  PathReplay rp(rec);
  double t = 0;
  auto drift = [&](double until) {
    double dt = until - t;
    if (dt <= 0) return;
    ev.all_rates(rp.fractions().data(), rates.data());
    for (int c = 0; c < comps; ++c) {
      double s = 0;
      for (int e = 0; e < ne; ++e) {
        int n = rp.counts().counts[c * k + m.graph.edge(e).from];
        s += n * (rates[c * ne + e] - 1.0);
      }
      out.per_component[c] -= dt * s;
    }
    t = until;
  };
  while (!rp.done()) {
    double te = rp.next_time();
    if (te > rec.horizon) break;
    drift(te);
    ev.all_rates(rp.fractions().data(), rates.data());
    const Event& e = rp.step();
    int ei = m.graph.edge_index(e.from, e.to);
    if (ei < 0) throw std::invalid_argument("record contains an inadmissible transition");
    out.per_component[e.component()] += std::log(rates[e.component() * ne + ei]);
  }
  drift(rec.horizon);
  for (double v : out.per_component) out.total += v;
  return out;
}

}  // namespace mfmeta

#endif
