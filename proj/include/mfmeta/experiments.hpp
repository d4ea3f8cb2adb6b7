#ifndef MFMETA_EXPERIMENTS_HPP
#define MFMETA_EXPERIMENTS_HPP

#include <chrono>
#include <filesystem>

#include "io.hpp"
#include "parallel.hpp"
#include "qpot.hpp"
#include "rng.hpp"

namespace mfmeta {

inline constexpr const char* version_string = "mfmeta 1.0.0";
inline constexpr const char* report_schema = "mfmeta.report/1";
inline constexpr const char* metric_name = "max over components of the sup norm";
inline constexpr const char* radii_convention = "gamma_i = closed r1-ball; exit = first event outside the open r0-ball";

struct ExperimentConfig {
  std::string kind;
  json model;                      // inline model document
  std::string model_path;          // or a file, resolved against base_dir
  std::string matrix_path;         // cycle_report from a stored matrix
  std::vector<int> n_values;
  int replicas = 100;
  double horizon = 5;
  double dt = 1e-3;
  double r0 = 0;                   // 0 takes the catalog default
  double r1 = 0;
  int compact = 0;                 // stable compact for exit scaling
  std::vector<std::vector<double>> inits;
  double tolerance = 0.05;         // lln threshold on the sup distance
  std::vector<double> probe_times;
  std::uint64_t max_events = 2'000'000'000ULL;
  std::uint64_t seed = 1;
  int threads = 1;
  bool avoiding = false;
  std::string base_dir = ".";

  json to_json() const {
    json j;
    j["kind"] = kind;
    if (!model.is_null()) j["model"] = model;
    if (!model_path.empty()) j["model_path"] = model_path;
    if (!matrix_path.empty()) j["matrix_path"] = matrix_path;
    j["n"] = n_values;
    j["replicas"] = replicas;
    j["horizon"] = horizon;
    j["dt"] = dt;
    j["r0"] = r0;
    j["r1"] = r1;
    j["compact"] = compact;
    j["inits"] = inits;
    j["tolerance"] = tolerance;
    j["probe_times"] = probe_times;
    j["max_events"] = max_events;
    j["seed"] = seed;
    j["avoiding"] = avoiding;
    return j;
  }
};

inline ExperimentConfig experiment_from_json(const json& j, const std::string& base_dir = ".") {
  static const std::vector<std::string> kinds = {"lln", "exit_scaling", "invariant_occupation",
                                                 "qpot_matrix", "cycle_report", "convergence_probe"};
  ExperimentConfig c;
  c.base_dir = base_dir;
  c.kind = j.at("kind").get<std::string>();
  if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) throw std::invalid_argument("unknown experiment kind " + c.kind);
  if (j.contains("model")) {
    if (j["model"].is_string()) c.model_path = j["model"].get<std::string>();
    else c.model = j["model"];
  }
  if (j.contains("model_path")) c.model_path = j["model_path"].get<std::string>();
  if (j.contains("matrix_path")) c.matrix_path = j["matrix_path"].get<std::string>();
  if (j.contains("n")) {
    if (j["n"].is_array()) c.n_values = j["n"].get<std::vector<int>>();
    else c.n_values = {j["n"].get<int>()};
  }
  c.replicas = j.value("replicas", c.replicas);
  c.horizon = j.value("horizon", c.horizon);
  c.dt = j.value("dt", c.dt);
  c.r0 = j.value("r0", c.r0);
  c.r1 = j.value("r1", c.r1);
  c.compact = j.value("compact", c.compact);
  if (j.contains("inits")) c.inits = j["inits"].get<std::vector<std::vector<double>>>();
  c.tolerance = j.value("tolerance", c.tolerance);
  if (j.contains("probe_times")) c.probe_times = j["probe_times"].get<std::vector<double>>();
  c.max_events = j.value("max_events", c.max_events);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.avoiding = j.value("avoiding", c.avoiding);
  for (int n : c.n_values)
    if (n < 1) throw std::invalid_argument("population sizes must be positive");
  if (c.replicas < 1) throw std::invalid_argument("replicas must be positive");
  if (c.kind != "cycle_report" || c.matrix_path.empty())
    if (c.model.is_null() && c.model_path.empty()) throw std::invalid_argument("experiment needs a model");
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  auto dir = std::filesystem::path(path).parent_path().string();
  return experiment_from_json(read_json_file(path), dir.empty() ? "." : dir);
}

// content is reproducible bit-exactly from (config, seed); wall time is kept apart.
struct ExperimentReport {
  json content;
  double wall_seconds = 0;

  json to_json() const {
    json j = content;
    j["timing"] = {{"wall_seconds", wall_seconds}};
    return j;
  }
};

namespace detail {

inline std::string resolve_path(const ExperimentConfig& c, const std::string& p) {
  std::filesystem::path q(p);
  if (q.is_absolute() || std::filesystem::exists(q)) return q.string();
  return (std::filesystem::path(c.base_dir) / q).string();
}

inline BlockModel experiment_model(const ExperimentConfig& c) {
  if (!c.model_path.empty()) return load_model(resolve_path(c, c.model_path));
  BlockModel m = model_from_json(c.model);
  require_valid(m);
  return m;
}

inline CompactCatalog experiment_catalog(const BlockModel& m, const ExperimentConfig& c) {
  EquilibriumOptions eo;
  eo.r0 = c.r0;
  eo.r1 = c.r1;
  return find_equilibria(m, {}, eo);
}

inline json header(const ExperimentConfig& c, const CompactCatalog* cat) {
  json j;
  j["schema"] = report_schema;
  j["kind"] = c.kind;
  j["version"] = version_string;
  j["seed"] = c.seed;
  j["config"] = c.to_json();
  j["metric"] = metric_name;
  j["radii_convention"] = radii_convention;
  if (cat) {
    j["r0"] = cat->r0;
    j["r1"] = cat->r1;
    j["catalog"] = catalog_to_json(*cat);
  }
  return j;
}

inline EmpiricalVector init_vector(const BlockModel& m, const std::vector<double>& v) {
  Layout l = m.layout();
  if (static_cast<int>(v.size()) == l.colors) return EmpiricalVector::replicate(l.blocks, v);
  return EmpiricalVector(l.blocks, l.colors, v);
}

inline int require_n(const ExperimentConfig& c) {
  if (c.n_values.empty()) throw std::invalid_argument(c.kind + " needs n");
  return c.n_values.front();
}

template <class F>
ExperimentReport timed(F&& f) {
  auto t0 = std::chrono::steady_clock::now();
  ExperimentReport r;
  r.content = f();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline double mean_of(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v;
  return s / x.size();
}

inline double sd_of(const std::vector<double>& x) {
  if (x.size() < 2) return 0;
  double mu = mean_of(x), s = 0;
  for (double v : x) s += (v - mu) * (v - mu);
  return std::sqrt(s / (x.size() - 1));
}

}  // namespace detail

// Sup over event times of the distance between the jump path and the interpolated ODE,
// with both one-sided limits checked at each jump.
inline double lln_deviation(const BlockModel& m, const PopulationCounts& init, const OdeSolution& ode, double T,
                            std::uint64_t seed) {
  JumpProcess p(m, init, seed);
  int n = m.layout().size();
  std::vector<double> prev = p.fractions();
  double worst = sup_distance(prev.data(), ode.at(0).data(), n);
  while (auto ev = p.advance(T)) {
    auto x = ode.at(ev->time);
    worst = std::max(worst, sup_distance(prev.data(), x.data(), n));
    worst = std::max(worst, sup_distance(p.fractions().data(), x.data(), n));
    prev = p.fractions();
  }
  worst = std::max(worst, sup_distance(prev.data(), ode.at(T).data(), n));
  return worst;
}

inline ExperimentReport run_lln(const ExperimentConfig& c) {
  return detail::timed([&] {
    BlockModel m = detail::experiment_model(c);
    int N = detail::require_n(c);
    EmpiricalVector nu = c.inits.empty() ? EmpiricalVector::uniform(m.block_count(), m.colors())
                                         : detail::init_vector(m, c.inits.front());
    auto init = counts_from_fractions(m, nu, N);
    auto ode = integrate(m, init.empirical(), c.horizon, c.dt);
    std::vector<double> dev(c.replicas);
    parallel_for(c.replicas, c.threads,
                 [&](int r) { dev[r] = lln_deviation(m, init, ode, c.horizon, substream_seed(c.seed, N, r)); });
    json j = detail::header(c, nullptr);
    int within = 0;
    for (double d : dev) within += d < c.tolerance;
    j["results"] = {{"n", N},
                    {"horizon", c.horizon},
                    {"initial", jvec(init.empirical().values())},
                    {"sup_distance", jvec(dev)},
                    {"within_tolerance", within},
                    {"replicas", c.replicas},
                    {"max_sup_distance", *std::max_element(dev.begin(), dev.end())}};
    return j;
  });
}

struct SlopeFit {
  bool available = false;
  double slope = 0;
  double intercept = 0;
  double se = 0;   // from the per-point standard errors of log(mean)
};

// OLS of y on x; se propagates independent per-point errors through the slope weights.
inline SlopeFit fit_slope(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& y_se) {
  SlopeFit f;
  if (x.size() < 2) return f;
  double xm = detail::mean_of(x), ym = detail::mean_of(y), sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - xm) * (x[i] - xm);
    sxy += (x[i] - xm) * (y[i] - ym);
  }
  if (!(sxx > 0)) return f;
  f.available = true;
  f.slope = sxy / sxx;
  f.intercept = ym - f.slope * xm;
  double v = 0;
  for (std::size_t i = 0; i < x.size(); ++i) v += std::pow((x[i] - xm) / sxx * y_se[i], 2);
  f.se = std::sqrt(v);
  return f;
}

inline ExperimentReport run_exit_scaling(const ExperimentConfig& c, const QpotOptions& qo = {}) {
  return detail::timed([&] {
    BlockModel m = detail::experiment_model(c);
    CompactCatalog full = detail::experiment_catalog(m, c);
    CompactCatalog cat = full.stable_only();
    if (c.compact < 0 || c.compact >= static_cast<int>(cat.size())) throw std::invalid_argument("no such stable compact");
    if (c.n_values.empty()) throw std::invalid_argument("exit_scaling needs n");
    const EmpiricalVector& center = cat.points[c.compact].point;
    auto inside = ball_domain(center, full.r0);
    json j = detail::header(c, &full);
    json rows = json::array();
    std::vector<double> xs, ys, ses;
    bool partial = false;
    for (int N : c.n_values) {
      auto init = counts_from_fractions(m, center, N);
      std::vector<ExitResult> res(c.replicas);
      parallel_for(c.replicas, c.threads, [&](int r) {
        res[r] = exit_time(m, init, inside, substream_seed(c.seed, N, r), c.max_events);
      });
      std::vector<double> t;
      int exhausted = 0;
      std::uint64_t events = 0;
      for (auto& r : res) {
        events += r.events;
        if (r.budget_exhausted) ++exhausted;
        else t.push_back(r.time);
      }
      json row = {{"n", N}, {"replicas", c.replicas}, {"completed", t.size()}, {"budget_exhausted", exhausted},
                  {"events", events}};
      if (!t.empty()) {
        double mu = detail::mean_of(t), sd = detail::sd_of(t);
        double se = sd / (mu * std::sqrt(double(t.size())));
        row["mean_exit_time"] = mu;
        row["sd_exit_time"] = sd;
        row["log_mean"] = std::log(mu);
        row["log_mean_se"] = se;
        if (exhausted == 0) {
          xs.push_back(N);
          ys.push_back(std::log(mu));
          ses.push_back(se);
        }
      }
      partial = partial || exhausted > 0;
      rows.push_back(row);
    }
    SlopeFit f = fit_slope(xs, ys, ses);
    QpotOptions o = qo;
    o.threads = std::max(o.threads, c.threads);
    QpotResult q = exit_cost(m, center, full.r0, o);
    json res = {{"compact", c.compact}, {"center", jvec(center.values())}, {"radius", full.r0}, {"per_n", rows},
                {"partial", partial}, {"slope_available", f.available}, {"exit_cost", q.value},
                {"exit_cost_converged", q.diagnostics.converged}};
    if (f.available) {
      res["slope"] = f.slope;
      res["slope_se"] = f.se;
      res["intercept"] = f.intercept;
      res["relative_difference"] = std::abs(f.slope - q.value) / q.value;
    }
    j["results"] = res;
    return j;
  });
}

// Time-weighted fraction of [0, T] spent in each closed r1-ball.
inline std::vector<double> occupation_fractions(const BlockModel& m, const PopulationCounts& init,
                                                const CompactBalls& balls, double T, std::uint64_t seed,
                                                std::uint64_t* events = nullptr) {
  JumpProcess p(m, init, seed);
  std::vector<double> occ(balls.centers.size(), 0.0);
  double last = 0;
  int where = balls.gamma_index(p.fractions().data());
  for (;;) {
    auto ev = p.advance(T);
    double t = ev ? ev->time : T;
    if (where >= 0) occ[where] += t - last;
    last = t;
    if (!ev) break;
    where = balls.gamma_index(p.fractions().data());
  }
  if (events) *events = p.events();
  for (auto& x : occ) x /= T;
  return occ;
}

// Positions sorted by value, ties by index.
inline std::vector<int> ranking(const std::vector<double>& v) {
  std::vector<int> r(v.size());
  std::iota(r.begin(), r.end(), 0);
  std::stable_sort(r.begin(), r.end(), [&](int a, int b) { return v[a] < v[b]; });
  return r;
}

inline ExperimentReport run_invariant_occupation(const ExperimentConfig& c, const QpotOptions& qo = {}) {
  return detail::timed([&] {
    BlockModel m = detail::experiment_model(c);
    CompactCatalog full = detail::experiment_catalog(m, c);
    CompactCatalog cat = full.stable_only();
    if (cat.size() < 2) throw std::invalid_argument("occupation needs at least two stable compacts");
    int N = detail::require_n(c);
    QpotOptions o = qo;
    o.threads = std::max(o.threads, c.threads);
    auto costs = compact_cost_matrix(m, cat, c.avoiding ? CostMode::avoiding : CostMode::direct, o, saddle_points(full));
    auto s = invariant_rates(costs.matrix);
    EmpiricalVector start = c.inits.empty() ? cat.points[c.compact].point : detail::init_vector(m, c.inits.front());
    std::uint64_t events = 0;
    auto occ = occupation_fractions(m, counts_from_fractions(m, start, N), cat.balls(), c.horizon,
                                    substream_seed(c.seed, N), &events);
    json rates = json::array();
    std::vector<double> neglog(occ.size(), infinity);
    json flags = json::array();
    for (std::size_t i = 0; i < occ.size(); ++i) {
      if (occ[i] > 0) neglog[i] = -std::log(occ[i]) / N;
      else flags.push_back("compact " + std::to_string(i) + " never visited");
      rates.push_back(jnum(neglog[i]));
    }
    int dominant = static_cast<int>(std::max_element(occ.begin(), occ.end()) - occ.begin());
    int predicted = static_cast<int>(std::min_element(s.begin(), s.end()) - s.begin());
    bool strict = true;
    for (std::size_t i = 0; i < occ.size(); ++i)
      if (static_cast<int>(i) != dominant && !(occ[i] < occ[dominant])) strict = false;
    bool ties = false;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t k = i + 1; k < s.size(); ++k) ties = ties || std::abs(s[i] - s[k]) < 1e-9;
    double total = 0;
    for (double x : occ) total += x;
    json j = detail::header(c, &full);
    json mat = json::array();
    for (int i = 0; i < costs.matrix.n; ++i) {
      std::vector<double> row(costs.matrix.v.begin() + i * costs.matrix.n, costs.matrix.v.begin() + (i + 1) * costs.matrix.n);
      mat.push_back(jvec(row));
    }
    j["results"] = {{"n", N},
                    {"horizon", c.horizon},
                    {"events", events},
                    {"occupation", jvec(occ)},
                    {"occupation_total", total},
                    {"neg_log_occupation_over_n", rates},
                    {"s", jvec(s)},
                    {"cost_matrix", mat},
                    {"cost_flags", std::vector<int>(costs.flagged.begin(), costs.flagged.end())},
                    {"dominant", dominant},
                    {"predicted_dominant", predicted},
                    {"strictly_dominant", strict},
                    {"ordering_matches", ranking(neglog) == ranking(s)},
                    {"s_ties", ties},
                    {"flags", flags}};
    return j;
  });
}

inline ExperimentReport run_qpot_matrix(const ExperimentConfig& c, const QpotOptions& qo = {}) {
  return detail::timed([&] {
    BlockModel m = detail::experiment_model(c);
    CompactCatalog full = detail::experiment_catalog(m, c);
    CompactCatalog cat = full.stable_only();
    QpotOptions o = qo;
    o.threads = std::max(o.threads, c.threads);
    auto costs = compact_cost_matrix(m, cat, c.avoiding ? CostMode::avoiding : CostMode::direct, o, saddle_points(full));
    json j = detail::header(c, &full);
    json mat = json::array();
    for (int i = 0; i < costs.matrix.n; ++i) {
      std::vector<double> row(costs.matrix.v.begin() + i * costs.matrix.n, costs.matrix.v.begin() + (i + 1) * costs.matrix.n);
      mat.push_back(jvec(row));
    }
    j["results"] = {{"matrix", mat},
                    {"mode", c.avoiding ? "avoiding" : "direct"},
                    {"flagged", std::vector<int>(costs.flagged.begin(), costs.flagged.end())},
                    {"horizons", jvec(costs.horizons)}};
    return j;
  });
}

inline ExperimentReport run_cycle_report(const ExperimentConfig& c, const QpotOptions& qo = {}) {
  return detail::timed([&] {
    json j;
    CostMatrix cm(0);
    if (!c.matrix_path.empty()) {
      j = detail::header(c, nullptr);
      cm = read_matrix_file(detail::resolve_path(c, c.matrix_path));
    } else {
      BlockModel m = detail::experiment_model(c);
      CompactCatalog full = detail::experiment_catalog(m, c);
      QpotOptions o = qo;
      o.threads = std::max(o.threads, c.threads);
      cm = compact_cost_matrix(m, full.stable_only(), c.avoiding ? CostMode::avoiding : CostMode::direct, o,
                               saddle_points(full)).matrix;
      j = detail::header(c, &full);
    }
    double N = c.n_values.empty() ? 0 : c.n_values.front();
    j["results"] = hierarchy_to_json(build_hierarchy(cm), N);
    return j;
  });
}

// Gap between time-T averages from two initial conditions, on coordinate projections
// and gamma indicators.  Replica r uses the same stream for both starts and all T.
inline ExperimentReport run_convergence_probe(const ExperimentConfig& c, const QpotOptions& qo = {}) {
  return detail::timed([&] {
    BlockModel m = detail::experiment_model(c);
    CompactCatalog full = detail::experiment_catalog(m, c);
    CompactCatalog cat = full.stable_only();
    int N = detail::require_n(c);
    Layout l = m.layout();
    std::vector<EmpiricalVector> starts;
    if (c.inits.size() >= 2) {
      starts = {detail::init_vector(m, c.inits[0]), detail::init_vector(m, c.inits[1])};
    } else {
      std::vector<double> a(l.colors, 0.0), b(l.colors, 0.0);
      a.front() = 1;
      b.back() = 1;
      starts = {EmpiricalVector::replicate(l.blocks, a), EmpiricalVector::replicate(l.blocks, b)};
    }
    std::vector<double> times = c.probe_times;
    if (times.empty())
      for (double t = 1; t <= c.horizon * (1 + 1e-12); t *= 2) times.push_back(t);
    if (times.empty() || !std::is_sorted(times.begin(), times.end()) || times.front() < 0)
      throw std::invalid_argument("probe times must be nonnegative and increasing");
    auto balls = cat.balls();
    int nf = l.size() + static_cast<int>(cat.size());
    int nt = static_cast<int>(times.size());
    // f[start][replica][time * nf + functional]
    std::vector<std::vector<std::vector<double>>> f(2, std::vector<std::vector<double>>(c.replicas));
    std::vector<PopulationCounts> inits = {counts_from_fractions(m, starts[0], N), counts_from_fractions(m, starts[1], N)};
    parallel_for(2 * c.replicas, c.threads, [&](int q) {
      int a = q / c.replicas, r = q % c.replicas;
      JumpProcess p(m, inits[a], substream_seed(c.seed, N, r));
      auto& out = f[a][r];
      out.assign(nt * nf, 0.0);
      for (int k = 0; k < nt; ++k) {
        while (p.advance(times[k])) {
        }
        const auto& x = p.fractions();
        for (int i = 0; i < l.size(); ++i) out[k * nf + i] = x[i];
        int g = balls.gamma_index(x.data());
        if (g >= 0) out[k * nf + l.size() + g] = 1;
      }
    });
    json rows = json::array();
    for (int k = 0; k < nt; ++k) {
      std::vector<double> gaps(nf), ses(nf);
      for (int i = 0; i < nf; ++i) {
        std::vector<double> va(c.replicas), vb(c.replicas);
        for (int r = 0; r < c.replicas; ++r) {
          va[r] = f[0][r][k * nf + i];
          vb[r] = f[1][r][k * nf + i];
        }
        gaps[i] = std::abs(detail::mean_of(va) - detail::mean_of(vb));
        double sa = detail::sd_of(va), sb = detail::sd_of(vb);
        ses[i] = std::sqrt((sa * sa + sb * sb) / c.replicas);
      }
      rows.push_back({{"t", times[k]},
                      {"gaps", jvec(gaps)},
                      {"gap_se", jvec(ses)},
                      {"max_gap", *std::max_element(gaps.begin(), gaps.end())}});
    }
    json res = {{"n", N}, {"replicas", c.replicas}, {"starts", {jvec(starts[0].values()), jvec(starts[1].values())}},
                {"functionals", nf}, {"per_t", rows}};
    if (cat.size() >= 2) {
      QpotOptions o = qo;
      o.threads = std::max(o.threads, c.threads);
      auto cm = compact_cost_matrix(m, cat, c.avoiding ? CostMode::avoiding : CostMode::direct, o, saddle_points(full));
      double lam = lambda_constant(cm.matrix);
      res["lambda"] = jnum(lam);
      res["mixing_timescale"] = jnum(std::exp(N * lam));
    }
    json j = detail::header(c, &full);
    j["results"] = res;
    return j;
  });
}

inline ExperimentReport run_experiment(const ExperimentConfig& c, const QpotOptions& qo = {}) {
  if (c.kind == "lln") return run_lln(c);
  if (c.kind == "exit_scaling") return run_exit_scaling(c, qo);
  if (c.kind == "invariant_occupation") return run_invariant_occupation(c, qo);
  if (c.kind == "qpot_matrix") return run_qpot_matrix(c, qo);
  if (c.kind == "cycle_report") return run_cycle_report(c, qo);
  if (c.kind == "convergence_probe") return run_convergence_probe(c, qo);
  throw std::invalid_argument("unknown experiment kind " + c.kind);
}

}  // namespace mfmeta

#endif
