#ifndef MFMETA_MODEL_HPP
#define MFMETA_MODEL_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfmeta {

enum class Category : int { central = 0, peripheral = 1 };

inline const char* category_name(Category c) {
  return c == Category::central ? "central" : "peripheral";
}

struct Edge {
  int from = 0;
  int to = 0;
};

// Directed graph of admissible color changes.
class ColorGraph {
 public:
  ColorGraph() = default;

  ColorGraph(int colors, std::vector<Edge> edges) : colors_(colors), edges_(std::move(edges)) {
    if (colors_ < 2) throw std::invalid_argument("color graph needs at least 2 colors");
    out_.assign(colors_, {});
    index_.assign(static_cast<std::size_t>(colors_) * colors_, -1);
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      auto [a, b] = edges_[e];
      if (a < 0 || b < 0 || a >= colors_ || b >= colors_)
        throw std::invalid_argument("edge color out of range");
      if (a == b) throw std::invalid_argument("self-loop in color graph");
      if (index_[a * colors_ + b] >= 0) throw std::invalid_argument("duplicate edge in color graph");
      index_[a * colors_ + b] = static_cast<int>(e);
      out_[a].push_back(static_cast<int>(e));
    }
  }

  static ColorGraph complete(int colors) {
    std::vector<Edge> es;
    for (int a = 0; a < colors; ++a)
      for (int b = 0; b < colors; ++b)
        if (a != b) es.push_back({a, b});
    return ColorGraph(colors, es);
  }

  int colors() const { return colors_; }
  int edge_count() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(int e) const { return edges_[e]; }
  const std::vector<int>& out_edges(int z) const { return out_[z]; }
  int out_degree(int z) const { return static_cast<int>(out_[z].size()); }
  int max_out_degree() const {
    int d = 0;
    for (auto& o : out_) d = std::max(d, static_cast<int>(o.size()));
    return d;
  }
  // -1 when (from, to) is not admissible.
  int edge_index(int from, int to) const { return index_[from * colors_ + to]; }

  bool reaches(int a, int b) const { return hops(a)[b] >= 0; }

  // BFS distances from a, -1 when unreachable.
  std::vector<int> hops(int a) const {
    std::vector<int> d(colors_, -1);
    std::queue<int> q;
    d[a] = 0;
    q.push(a);
    while (!q.empty()) {
      int z = q.front();
      q.pop();
      for (int e : out_[z]) {
        int w = edges_[e].to;
        if (d[w] < 0) {
          d[w] = d[z] + 1;
          q.push(w);
        }
      }
    }
    return d;
  }

  // Edge indices of a shortest path a -> b; empty when a == b or unreachable.
  std::vector<int> shortest_path(int a, int b) const {
    std::vector<int> via(colors_, -1);
    std::vector<char> seen(colors_, 0);
    std::queue<int> q;
    seen[a] = 1;
    q.push(a);
    while (!q.empty()) {
      int z = q.front();
      q.pop();
      for (int e : out_[z]) {
        int w = edges_[e].to;
        if (!seen[w]) {
          seen[w] = 1;
          via[w] = e;
          q.push(w);
        }
      }
    }
    std::vector<int> path;
    if (a == b || !seen[b]) return path;
    for (int z = b; z != a; z = edges_[via[z]].from) path.push_back(via[z]);
    std::reverse(path.begin(), path.end());
    return path;
  }

  bool irreducible() const {
    for (int a = 0; a < colors_; ++a) {
      auto d = hops(a);
      if (std::any_of(d.begin(), d.end(), [](int x) { return x < 0; })) return false;
    }
    return true;
  }

 private:
  int colors_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> out_;
  std::vector<int> index_;
};

// Flat layout of 2r probability vectors on K colors, ordered
// (block 0 central, block 0 peripheral, block 1 central, ...).
struct Layout {
  int blocks = 0;
  int colors = 0;
  int components() const { return 2 * blocks; }
  int size() const { return 2 * blocks * colors; }
  static int component(int block, Category c) { return 2 * block + static_cast<int>(c); }
  static int block_of(int comp) { return comp / 2; }
  static Category category_of(int comp) { return static_cast<Category>(comp % 2); }
  bool operator==(const Layout&) const = default;
};

// Read-only access to a flat state without ownership or validation.
struct MeasureView {
  const double* data = nullptr;
  Layout layout;
  double operator()(int comp, int z) const { return data[comp * layout.colors + z]; }
  const double* component(int comp) const { return data + comp * layout.colors; }
};

class EmpiricalVector {
 public:
  static constexpr double clamp_tolerance = 1e-12;
  static constexpr double sum_tolerance = 1e-9;

  EmpiricalVector() = default;

  // Entries down to -1e-12 are clamped to zero and each component renormalized.
  EmpiricalVector(int blocks, int colors, std::vector<double> values)
      : layout_{blocks, colors}, v_(std::move(values)) {
    if (blocks < 1 || colors < 2) throw std::invalid_argument("empirical vector needs r >= 1 and K >= 2");
    if (static_cast<int>(v_.size()) != layout_.size())
      throw std::invalid_argument("empirical vector has wrong number of entries");
    for (int c = 0; c < layout_.components(); ++c) {
      double s = 0;
      for (int z = 0; z < colors; ++z) {
        double& x = v_[c * colors + z];
        if (!std::isfinite(x)) throw std::invalid_argument("non-finite entry in empirical vector");
        if (x < -clamp_tolerance) {
          std::ostringstream os;
          os << "negative entry " << x << " in component " << c;
          throw std::invalid_argument(os.str());
        }
        if (x < 0) x = 0;
        s += x;
      }
      if (std::abs(s - 1.0) > sum_tolerance) {
        std::ostringstream os;
        os.precision(12);
        os << "component " << c << " sums to " << s;
        throw std::invalid_argument(os.str());
      }
      for (int z = 0; z < colors; ++z) v_[c * colors + z] /= s;
    }
  }

  // Clamps negatives and renormalizes without the sum check.
  static EmpiricalVector projected(Layout l, std::vector<double> values, double floor = 0.0) {
    for (int c = 0; c < l.components(); ++c) {
      double s = 0;
      for (int z = 0; z < l.colors; ++z) {
        double& x = values[c * l.colors + z];
        x = std::max(x, floor);
        s += x;
      }
      for (int z = 0; z < l.colors; ++z) values[c * l.colors + z] /= s;
    }
    return EmpiricalVector(l.blocks, l.colors, std::move(values));
  }

  static EmpiricalVector uniform(int blocks, int colors) {
    return EmpiricalVector(blocks, colors, std::vector<double>(2 * blocks * colors, 1.0 / colors));
  }

  // Every component equal to nu.
  static EmpiricalVector replicate(int blocks, std::span<const double> nu) {
    std::vector<double> v;
    for (int c = 0; c < 2 * blocks; ++c) v.insert(v.end(), nu.begin(), nu.end());
    return EmpiricalVector(blocks, static_cast<int>(nu.size()), std::move(v));
  }

  const Layout& layout() const { return layout_; }
  int blocks() const { return layout_.blocks; }
  int colors() const { return layout_.colors; }
  int components() const { return layout_.components(); }
  const std::vector<double>& values() const { return v_; }
  double operator()(int comp, int z) const { return v_[comp * layout_.colors + z]; }
  std::span<const double> component(int comp) const {
    return {v_.data() + comp * layout_.colors, static_cast<std::size_t>(layout_.colors)};
  }
  std::span<const double> component(int block, Category c) const {
    return component(Layout::component(block, c));
  }
  MeasureView view() const { return {v_.data(), layout_}; }

 private:
  Layout layout_;
  std::vector<double> v_;
};

// Max over components of the max-norm difference.
inline double sup_distance(const double* a, const double* b, int n) {
  double d = 0;
  for (int i = 0; i < n; ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double product_metric(const EmpiricalVector& a, const EmpiricalVector& b) {
  if (!(a.layout() == b.layout())) throw std::invalid_argument("product_metric: shape mismatch");
  return sup_distance(a.values().data(), b.values().data(), a.layout().size());
}

inline EmpiricalVector uniform_vector(int blocks, int colors) { return EmpiricalVector::uniform(blocks, colors); }

// Reference to one argument measure of a rate function.
//   own_central      mu_j^c
//   own_peripheral   mu_j^p
//   peripheral_block mu_b^p (peripheral rates only)
struct ArgRef {
  enum Kind { own_central, own_peripheral, peripheral_block };
  Kind kind = own_central;
  int block = 0;
  int color = 0;

  int flat_index(int j, int colors) const {
    int comp = kind == own_central ? Layout::component(j, Category::central)
               : kind == own_peripheral ? Layout::component(j, Category::peripheral)
                                        : Layout::component(block, Category::peripheral);
    return comp * colors + color;
  }
};

// coef * a, or coef * a * b when b is set.
struct RateTerm {
  double coef = 0;
  ArgRef a;
  std::optional<ArgRef> b;
};

// max(c, base + sum of terms).
struct ParametricRate {
  double base = 0;
  std::vector<RateTerm> terms;
};

using RateFunction = std::function<double(MeasureView, int block)>;

struct RateSpec {
  double lower_bound = 0;
  double upper_bound = 0;
  // [category][block][edge]
  std::array<std::vector<std::vector<ParametricRate>>, 2> parametric;
  // Optional overrides, same indexing; empty functions are ignored.
  std::array<std::vector<std::vector<RateFunction>>, 2> custom;
};

struct BlockParams {
  double alpha = 1;
  double p_central = 0.5;
  double p_peripheral = 0.5;
  double p(Category c) const { return c == Category::central ? p_central : p_peripheral; }
};

struct BlockModel {
  ColorGraph graph;
  std::vector<BlockParams> blocks;
  RateSpec rates;

  int block_count() const { return static_cast<int>(blocks.size()); }
  int colors() const { return graph.colors(); }
  Layout layout() const { return {block_count(), colors()}; }
  double weight(int comp) const {
    return blocks[Layout::block_of(comp)].alpha * blocks[Layout::block_of(comp)].p(Layout::category_of(comp));
  }
};

// Compiled rate evaluation: out[comp * |E| + e].
class RateEvaluator {
 public:
  RateEvaluator() = default;
  explicit RateEvaluator(const BlockModel& m) : model_(&m), layout_(m.layout()), edges_(m.graph.edge_count()) {
    int n = layout_.components() * edges_;
    compiled_.resize(n);
    custom_.resize(n);
    for (int comp = 0; comp < layout_.components(); ++comp) {
      int j = Layout::block_of(comp);
      int cat = static_cast<int>(Layout::category_of(comp));
      for (int e = 0; e < edges_; ++e) {
        Compiled& c = compiled_[comp * edges_ + e];
        auto& cus = m.rates.custom[cat];
        if (j < static_cast<int>(cus.size()) && e < static_cast<int>(cus[j].size()) && cus[j][e]) {
          custom_[comp * edges_ + e] = cus[j][e];
          continue;
        }
        auto& par = m.rates.parametric[cat];
        if (j >= static_cast<int>(par.size()) || e >= static_cast<int>(par[j].size()))
          throw std::invalid_argument("rate table is missing an entry");
        const ParametricRate& pr = par[j][e];
        c.base = pr.base;
        for (auto& t : pr.terms) {
          int ia = t.a.flat_index(j, layout_.colors);
          if (t.b) c.prod.push_back({t.coef, ia, t.b->flat_index(j, layout_.colors)});
          else c.lin.push_back({t.coef, ia, -1});
        }
      }
    }
    floor_ = m.rates.lower_bound;
  }

  const Layout& layout() const { return layout_; }
  int edges() const { return edges_; }

  void all_rates(const double* state, double* out) const {
    MeasureView view{state, layout_};
    int n = static_cast<int>(compiled_.size());
    for (int i = 0; i < n; ++i) {
      double v;
      if (custom_[i]) {
        v = custom_[i](view, Layout::block_of(i / edges_));
      } else {
        const Compiled& c = compiled_[i];
        v = c.base;
        for (auto& t : c.lin) v += t.coef * state[t.a];
        for (auto& t : c.prod) v += t.coef * state[t.a] * state[t.b];
      }
      out[i] = std::max(floor_, v);
    }
  }

  std::vector<double> all_rates(const EmpiricalVector& x) const {
    std::vector<double> out(compiled_.size());
    all_rates(x.values().data(), out.data());
    return out;
  }

 private:
  struct Term {
    double coef;
    int a;
    int b;
  };
  struct Compiled {
    double base = 0;
    std::vector<Term> lin;
    std::vector<Term> prod;
  };
  const BlockModel* model_ = nullptr;
  Layout layout_;
  int edges_ = 0;
  double floor_ = 0;
  std::vector<Compiled> compiled_;
  std::vector<RateFunction> custom_;
};

namespace detail {

inline void sample_simplex(std::mt19937_64& g, int k, double* out) {
  std::exponential_distribution<double> ex(1.0);
  double s = 0;
  for (int z = 0; z < k; ++z) s += (out[z] = ex(g));
  for (int z = 0; z < k; ++z) out[z] /= s;
}

}  // namespace detail

// Human-readable list of violations; empty when the model is usable.
inline std::vector<std::string> validate_model(const BlockModel& m) {
  std::vector<std::string> bad;
  auto add = [&](const std::string& s) { bad.push_back(s); };
  if (m.blocks.empty()) add("blocks: at least one block is required");
  if (m.graph.colors() < 2) {
    add("graph: at least 2 colors are required");
    return bad;
  }
  if (!m.graph.irreducible()) add("graph: color graph is not irreducible");
  double asum = 0;
  for (std::size_t j = 0; j < m.blocks.size(); ++j) {
    auto& b = m.blocks[j];
    asum += b.alpha;
    if (!(b.alpha > 0)) add("blocks: alpha of block " + std::to_string(j) + " is not positive");
    if (!(b.p_central > 0) || !(b.p_peripheral > 0))
      add("blocks: category share of block " + std::to_string(j) + " is not positive");
    if (std::abs(b.p_central + b.p_peripheral - 1) > 1e-9)
      add("blocks: p_central + p_peripheral != 1 in block " + std::to_string(j));
  }
  if (!m.blocks.empty() && std::abs(asum - 1) > 1e-9) add("blocks: alpha values do not sum to 1");
  const RateSpec& rs = m.rates;
  if (!(rs.lower_bound > 0)) add("rates: lower bound c must be positive");
  if (!(rs.upper_bound >= rs.lower_bound)) add("rates: upper bound C is below lower bound c");
  int r = m.block_count();
  for (int cat = 0; cat < 2; ++cat) {
    for (int j = 0; j < r; ++j) {
      for (int e = 0; e < m.graph.edge_count(); ++e) {
        bool has_custom = cat < 2 && j < static_cast<int>(rs.custom[cat].size()) &&
                          e < static_cast<int>(rs.custom[cat][j].size()) && rs.custom[cat][j][e];
        if (has_custom) continue;
        if (j >= static_cast<int>(rs.parametric[cat].size()) ||
            e >= static_cast<int>(rs.parametric[cat][j].size())) {
          add(std::string("rates: missing ") + category_name(static_cast<Category>(cat)) + " rate for block " +
              std::to_string(j) + " edge " + std::to_string(e));
          continue;
        }
        for (auto& t : rs.parametric[cat][j][e].terms) {
          for (const ArgRef* a : {&t.a, t.b ? &*t.b : nullptr}) {
            if (!a) continue;
            if (a->color < 0 || a->color >= m.colors()) add("rates: term color out of range");
            if (a->kind == ArgRef::peripheral_block) {
              if (cat == 0) add("rates: central rates may only depend on their own block");
              if (a->block < 0 || a->block >= r) add("rates: term block out of range");
            }
          }
        }
      }
    }
  }
  if (!bad.empty()) return bad;

  // Check the declared bounds on corners and random points.
  RateEvaluator ev(m);
  Layout l = m.layout();
  std::vector<double> x(l.size()), out(l.components() * m.graph.edge_count());
  double worst_hi = -std::numeric_limits<double>::infinity();
  bool nonfinite = false;
  auto check = [&] {
    ev.all_rates(x.data(), out.data());
    for (double v : out) {
      if (!std::isfinite(v)) nonfinite = true;
      else worst_hi = std::max(worst_hi, v);
    }
  };
  int comps = l.components(), k = l.colors;
  double corners = std::pow(static_cast<double>(k), comps);
  if (corners <= 4096) {
    std::vector<int> idx(comps, 0);
    for (long n = 0; n < static_cast<long>(corners); ++n) {
      std::fill(x.begin(), x.end(), 0.0);
      long t = n;
      for (int c = 0; c < comps; ++c) {
        x[c * k + t % k] = 1;
        t /= k;
      }
      check();
    }
  }
  std::mt19937_64 g(12345);
  for (int s = 0; s < 1000; ++s) {
    for (int c = 0; c < comps; ++c) detail::sample_simplex(g, k, x.data() + c * k);
    check();
  }
  if (nonfinite) add("rates: non-finite rate value");
  if (worst_hi > rs.upper_bound * (1 + 1e-12)) {
    std::ostringstream os;
    os << "rates: rate value " << worst_hi << " exceeds upper bound " << rs.upper_bound;
    add(os.str());
  }
  return bad;
}

inline void require_valid(const BlockModel& m) {
  auto bad = validate_model(m);
  if (!bad.empty()) {
    std::string s = "invalid model:";
    for (auto& b : bad) s += "\n  " + b;
    throw std::invalid_argument(s);
  }
}

}  // namespace mfmeta

#endif
