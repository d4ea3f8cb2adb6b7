#ifndef MFMETA_FW_HPP
#define MFMETA_FW_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfmeta {

// Square matrix of transition exponents; +inf marks an impossible transition.
// The diagonal is ignored.
struct CostMatrix {
  int n = 0;
  std::vector<double> v;

  CostMatrix() = default;
  explicit CostMatrix(int size) : n(size), v(static_cast<std::size_t>(size) * size, 0.0) {}
  CostMatrix(int size, std::vector<double> values) : n(size), v(std::move(values)) {
    if (static_cast<int>(v.size()) != n * n) throw std::invalid_argument("cost matrix needs n*n entries");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && (std::isnan((*this)(i, j)) || (*this)(i, j) < 0))
          throw std::invalid_argument("cost matrix entries must be non-negative");
  }
  double& operator()(int i, int j) { return v[i * n + j]; }
  double operator()(int i, int j) const { return v[i * n + j]; }
  int size() const { return n; }
};

inline constexpr int max_w_graph_size = 9;

// arrow[k] = successor of k, or -1 for k in W.
using WGraph = std::vector<int>;

namespace detail {

inline std::vector<char> membership(int l, std::span<const int> W) {
  std::vector<char> in(l, 0);
  for (int w : W) {
    if (w < 0 || w >= l) throw std::invalid_argument("W contains an index out of range");
    in[w] = 1;
  }
  return in;
}

// Does following arrows from a reach b?  (a not in W or a == b)
inline bool leads_to(const WGraph& g, int a, int b) {
  int steps = 0;
  while (a != b && a >= 0 && g[a] >= 0 && steps++ <= static_cast<int>(g.size())) a = g[a];
  return a == b;
}

class WGraphSearch {
 public:
  WGraphSearch(int l, const std::vector<char>& in_w) : l_(l), in_w_(in_w), arrow_(l, -1) {
    for (int k = 0; k < l; ++k)
      if (!in_w[k]) free_.push_back(k);
  }

  // Calls visit(graph) for every W-graph.
  void each(const std::function<void(const WGraph&)>& visit) { rec_each(0, visit); }

  // Minimum of sum cost(k, arrow[k]) over W-graphs accepted by keep.
  double minimum(const CostMatrix& cm, const std::function<bool(const WGraph&)>& keep, WGraph* best_graph) {
    // lower bound on the remaining cost: row minima over allowed targets
    row_min_.assign(l_, std::numeric_limits<double>::infinity());
    for (int k : free_)
      for (int t = 0; t < l_; ++t)
        if (t != k) row_min_[k] = std::min(row_min_[k], cm(k, t));
    suffix_.assign(free_.size() + 1, 0.0);
    for (int q = static_cast<int>(free_.size()) - 1; q >= 0; --q) suffix_[q] = suffix_[q + 1] + row_min_[free_[q]];
    best_ = std::numeric_limits<double>::infinity();
    best_graph_ = best_graph;
    cm_ = &cm;
    keep_ = &keep;
    if (free_.empty()) {
      if (keep(arrow_)) {
        best_ = 0;
        if (best_graph) *best_graph = arrow_;
      }
      return best_;
    }
    rec_min(0, 0.0);
    return best_;
  }

 private:
  bool closes_cycle(int k) const {
    int t = arrow_[k];
    for (int steps = 0; steps <= l_; ++steps) {
      if (t == k) return true;
      if (in_w_[t] || arrow_[t] < 0) return false;
      t = arrow_[t];
    }
    return true;
  }

  void rec_each(std::size_t q, const std::function<void(const WGraph&)>& visit) {
    if (q == free_.size()) {
      visit(arrow_);
      return;
    }
    int k = free_[q];
    for (int t = 0; t < l_; ++t) {
      if (t == k) continue;
      arrow_[k] = t;
      if (!closes_cycle(k)) rec_each(q + 1, visit);
    }
    arrow_[k] = -1;
  }

  void rec_min(std::size_t q, double partial) {
    if (q == free_.size()) {
      if (partial < best_ && (*keep_)(arrow_)) {
        best_ = partial;
        if (best_graph_) *best_graph_ = arrow_;
      }
      return;
    }
    if (!(partial + suffix_[q] < best_) && std::isfinite(best_)) return;
    int k = free_[q];
    // cheapest targets first so good incumbents appear early
    std::vector<int> order;
    for (int t = 0; t < l_; ++t)
      if (t != k && std::isfinite((*cm_)(k, t))) order.push_back(t);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return (*cm_)(k, a) < (*cm_)(k, b); });
    for (int t : order) {
      double p = partial + (*cm_)(k, t);
      if (std::isfinite(best_) && !(p + suffix_[q + 1] < best_)) continue;
      arrow_[k] = t;
      if (!closes_cycle(k)) rec_min(q + 1, p);
    }
    arrow_[k] = -1;
  }

  int l_;
  std::vector<char> in_w_;
  WGraph arrow_;
  std::vector<int> free_;
  std::vector<double> row_min_, suffix_;
  double best_ = 0;
  WGraph* best_graph_ = nullptr;
  const CostMatrix* cm_ = nullptr;
  const std::function<bool(const WGraph&)>* keep_ = nullptr;
};

inline void check_size(int l) {
  if (l < 1) throw std::invalid_argument("need at least one compact");
  if (l > max_w_graph_size) throw std::invalid_argument("W-graph enumeration is limited to l <= 9");
}

}  // namespace detail

// All W-graphs on {0..l-1}: each k outside W has one arrow k -> t (t != k) and
// no cycles.
inline std::vector<WGraph> enumerate_w_graphs(int l, std::span<const int> W) {
  detail::check_size(l);
  if (W.empty()) throw std::invalid_argument("W must be non-empty");
  auto in = detail::membership(l, W);
  std::vector<WGraph> out;
  detail::WGraphSearch s(l, in);
  s.each([&](const WGraph& g) { out.push_back(g); });
  return out;
}

inline double graph_cost(const CostMatrix& cm, const WGraph& g) {
  double s = 0;
  for (int k = 0; k < static_cast<int>(g.size()); ++k)
    if (g[k] >= 0) s += cm(k, g[k]);
  return s;
}

// min over G(W); optional path constraint i => j.
inline double min_w_graph(const CostMatrix& cm, std::span<const int> W, int from = -1, int to = -1,
                          WGraph* argmin = nullptr) {
  detail::check_size(cm.n);
  auto in = detail::membership(cm.n, W);
  detail::WGraphSearch s(cm.n, in);
  std::function<bool(const WGraph&)> keep = [&](const WGraph& g) {
    return from < 0 || detail::leads_to(g, from, to);
  };
  return s.minimum(cm, keep, argmin);
}

// W(K_i) = min over {i}-graphs.
inline double w_value(const CostMatrix& cm, int i) {
  int w[1] = {i};
  return min_w_graph(cm, w);
}

namespace detail {

// a - b with inf - inf treated as +inf.
inline double gap(double a, double b) {
  if (std::isinf(a)) return a;
  return a - b;
}

}  // namespace detail

struct ExitExponents {
  double I = 0;                  // I_i(W)
  std::vector<int> targets;      // j in W
  std::vector<double> I_to;      // I_{i,j}(W), aligned with targets
};

inline ExitExponents exponents_I(const CostMatrix& cm, int i, std::vector<int> W) {
  detail::check_size(cm.n);
  if (W.empty()) throw std::invalid_argument("W must be non-empty");
  std::sort(W.begin(), W.end());
  if (std::binary_search(W.begin(), W.end(), i)) throw std::invalid_argument("i must lie outside W");
  auto in = detail::membership(cm.n, W);
  double gw = min_w_graph(cm, W);
  std::vector<int> wi = W;
  wi.push_back(i);
  double rest = min_w_graph(cm, wi);
  for (int j = 0; j < cm.n; ++j) {
    if (in[j] || j == i) continue;
    std::vector<int> wj = W;
    wj.push_back(j);
    rest = std::min(rest, min_w_graph(cm, wj, i, j));
  }
  ExitExponents out;
  out.I = detail::gap(gw, rest);
  for (int j : W) {
    out.targets.push_back(j);
    out.I_to.push_back(detail::gap(min_w_graph(cm, W, i, j), gw));
  }
  return out;
}

// min over {i}-graphs minus min over {i,j}-graphs, each over all choices.
inline double lambda_constant(const CostMatrix& cm) {
  detail::check_size(cm.n);
  if (cm.n < 2) return 0;
  double a = std::numeric_limits<double>::infinity(), b = a;
  for (int i = 0; i < cm.n; ++i) {
    a = std::min(a, w_value(cm, i));
    for (int j = i + 1; j < cm.n; ++j) {
      int w[2] = {i, j};
      b = std::min(b, min_w_graph(cm, w));
    }
  }
  return detail::gap(a, b);
}

// s_i = W(K_i) - min_k W(K_k).
inline std::vector<double> invariant_rates(const CostMatrix& cm) {
  std::vector<double> w(cm.n);
  for (int i = 0; i < cm.n; ++i) w[i] = w_value(cm, i);
  double lo = *std::min_element(w.begin(), w.end());
  for (auto& x : w) x = detail::gap(x, lo);
  return w;
}

// s(xi) = min_l (W(K_l) + V(K_l, xi)) - min_i W(K_i), given V(K_l, xi) for every l.
inline double invariant_rate(const CostMatrix& cm, std::span<const double> v_from_compacts) {
  if (static_cast<int>(v_from_compacts.size()) != cm.n) throw std::invalid_argument("need one value per compact");
  std::vector<double> w(cm.n);
  for (int i = 0; i < cm.n; ++i) w[i] = w_value(cm, i);
  double lo = *std::min_element(w.begin(), w.end()), best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < cm.n; ++i) best = std::min(best, w[i] + v_from_compacts[i]);
  return detail::gap(best, lo);
}

}  // namespace mfmeta

#endif
