#ifndef MFMETA_CYCLES_HPP
#define MFMETA_CYCLES_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fw.hpp"

namespace mfmeta {

inline constexpr double tie_tolerance = 1e-12;

struct ArrowMap {
  std::vector<int> target;
  std::vector<double> value;   // row minimum
  std::vector<char> tied;      // argmin not unique within tie_tolerance
};

namespace detail {

// Row-wise argmin over j != i of a dense n*n table; smallest index wins ties.
inline ArrowMap arrows_of(int n, const std::vector<double>& t) {
  ArrowMap a;
  a.target.assign(n, -1);
  a.value.assign(n, std::numeric_limits<double>::infinity());
  a.tied.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      if (j != i) a.value[i] = std::min(a.value[i], t[i * n + j]);
    int hits = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i || !(t[i * n + j] <= a.value[i] + tie_tolerance)) continue;
      if (a.target[i] < 0) a.target[i] = j;
      ++hits;
    }
    a.tied[i] = hits > 1;
    if (n > 1 && !std::isfinite(a.value[i])) {
      std::ostringstream os;
      os << "row " << i << " has no finite entry";
      throw std::invalid_argument(os.str());
    }
  }
  return a;
}

inline bool reaches(const std::vector<int>& arrow, int a, int b) {
  for (int steps = 0, x = arrow[a]; steps < static_cast<int>(arrow.size()) && x >= 0; ++steps, x = arrow[x])
    if (x == b) return true;
  return false;
}

}  // namespace detail

// i -> argmin_j V(i, j).
inline ArrowMap base_arrows(const CostMatrix& cm) {
  if (cm.n < 2) throw std::invalid_argument("need at least two compacts");
  return detail::arrows_of(cm.n, cm.v);
}

struct CycleLevel {
  std::vector<std::vector<int>> members;   // indices into the previous level
  std::vector<std::vector<int>> compacts;  // base indices, sorted
  std::vector<char> formed;                // a cycle of the previous level, not carried over
  std::vector<double> v_hat;
  std::vector<double> v_exit;              // min over other elements of v_pair
  std::vector<double> v_pair;              // size*size, diagonal unused
  std::vector<int> arrow;                  // -1 on the final singleton
  std::vector<char> tied;

  int size() const { return static_cast<int>(compacts.size()); }
  double pair(int a, int b) const { return v_pair[a * size() + b]; }
};

struct CycleHierarchy {
  std::vector<CycleLevel> levels;
  bool degenerate = false;

  int height() const { return static_cast<int>(levels.size()) - 1; }
};

namespace detail {

// Directed cycles of a functional graph, each checked against the definition:
// closed under arrows and mutually reachable.
inline std::vector<std::vector<int>> functional_cycles(const std::vector<int>& arrow) {
  int n = static_cast<int>(arrow.size());
  std::vector<int> state(n, 0);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < n; ++s) {
    if (state[s]) continue;
    std::vector<int> stack;
    int x = s;
    while (x >= 0 && state[x] == 0) {
      state[x] = 1;
      stack.push_back(x);
      x = arrow[x];
    }
    if (x >= 0 && state[x] == 1) {
      auto it = std::find(stack.begin(), stack.end(), x);
      std::vector<int> cyc(it, stack.end());
      std::sort(cyc.begin(), cyc.end());
      out.push_back(cyc);
    }
    for (int y : stack) state[y] = 2;
  }
  for (auto& c : out) {
    for (int a : c) {
      if (!std::binary_search(c.begin(), c.end(), arrow[a])) throw std::logic_error("cycle not closed under arrows");
      for (int b : c)
        if (a != b && !reaches(arrow, a, b)) throw std::logic_error("cycle members not mutually reachable");
    }
  }
  return out;
}

inline void set_arrows(CycleLevel& lv, bool& degenerate) {
  int n = lv.size();
  if (n == 1) {
    lv.arrow = {-1};
    lv.v_exit = {std::numeric_limits<double>::infinity()};
    lv.tied = {0};
    return;
  }
  ArrowMap a = arrows_of(n, lv.v_pair);
  lv.arrow = a.target;
  lv.v_exit = a.value;
  lv.tied = a.tied;
  for (char t : a.tied) degenerate = degenerate || t;
}

}  // namespace detail

inline CycleHierarchy build_hierarchy(const CostMatrix& cm) {
  if (cm.n < 2) throw std::invalid_argument("need at least two compacts");
  CycleHierarchy h;
  CycleLevel base;
  for (int i = 0; i < cm.n; ++i) {
    base.members.push_back({i});
    base.compacts.push_back({i});
    base.formed.push_back(0);
  }
  base.v_pair = cm.v;
  detail::set_arrows(base, h.degenerate);
  base.v_hat = base.v_exit;
  h.levels.push_back(base);
  while (h.levels.back().size() > 1) {
    const CycleLevel& prev = h.levels.back();
    int n = prev.size();
    auto cycles = detail::functional_cycles(prev.arrow);
    std::vector<char> used(n, 0);
    std::vector<std::vector<int>> groups;
    std::vector<char> formed;
    for (auto& c : cycles) {
      for (int a : c) used[a] = 1;
      groups.push_back(c);
      formed.push_back(1);
    }
    for (int a = 0; a < n; ++a)
      if (!used[a]) {
        groups.push_back({a});
        formed.push_back(0);
      }
    std::vector<int> order(groups.size());
    std::vector<int> low(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      order[g] = static_cast<int>(g);
      low[g] = cm.n;
      for (int a : groups[g]) low[g] = std::min(low[g], prev.compacts[a].front());
    }
    std::sort(order.begin(), order.end(), [&](int x, int y) { return low[x] < low[y]; });
    CycleLevel lv;
    for (int g : order) {
      lv.members.push_back(groups[g]);
      lv.formed.push_back(formed[g]);
      std::vector<int> ks;
      for (int a : groups[g]) ks.insert(ks.end(), prev.compacts[a].begin(), prev.compacts[a].end());
      std::sort(ks.begin(), ks.end());
      lv.compacts.push_back(ks);
      double vh = -std::numeric_limits<double>::infinity();
      if (formed[g])
        for (int a : groups[g]) vh = std::max(vh, prev.v_exit[a]);
      else
        vh = prev.v_hat[groups[g].front()];
      lv.v_hat.push_back(vh);
    }
    int m = lv.size();
    lv.v_pair.assign(m * m, 0.0);
    for (int p = 0; p < m; ++p)
      for (int q = 0; q < m; ++q) {
        if (p == q) continue;
        double best = std::numeric_limits<double>::infinity();
        for (int a : lv.members[p])
          for (int b : lv.members[q]) {
            double d = lv.formed[p] ? prev.pair(a, b) - prev.v_exit[a] : prev.pair(a, b);
            best = std::min(best, d);
          }
        lv.v_pair[p * m + q] = lv.formed[p] ? lv.v_hat[p] + best : best;
      }
    detail::set_arrows(lv, h.degenerate);
    h.levels.push_back(std::move(lv));
  }
  return h;
}

struct ExitRow {
  int level = 0;
  int element = 0;
  std::vector<int> compacts;
  double exponent = 0;           // exit exponent V(pi)
  double mean_exit_time = 0;     // exp(N V(pi)), when N > 0
  std::vector<int> targets;
  std::vector<double> target_exponents;   // V(pi, pi') - V(pi)
};

// Exit and transition exponents for every element below the top level.
inline std::vector<ExitRow> exit_predictions(const CycleHierarchy& h, double N = 0) {
  std::vector<ExitRow> out;
  for (int L = 0; L < h.height(); ++L) {
    const CycleLevel& lv = h.levels[L];
    for (int p = 0; p < lv.size(); ++p) {
      ExitRow r;
      r.level = L;
      r.element = p;
      r.compacts = lv.compacts[p];
      r.exponent = lv.v_exit[p];
      r.mean_exit_time = N > 0 ? std::exp(N * r.exponent) : 0;
      for (int q = 0; q < lv.size(); ++q) {
        if (q == p) continue;
        r.targets.push_back(q);
        r.target_exponents.push_back(lv.pair(p, q) - lv.v_exit[p]);
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace mfmeta

#endif
