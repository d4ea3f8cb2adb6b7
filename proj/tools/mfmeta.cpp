#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include <mfmeta/experiments.hpp>

using namespace mfmeta;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = ".";
};

std::string out_path(const Globals& g, const std::string& p) {
  fs::path q(p);
  if (q.is_absolute()) return p;
  fs::create_directories(g.out_dir);
  return (fs::path(g.out_dir) / q).string();
}

std::ofstream open_out(const Globals& g, const std::string& p) {
  std::ofstream f(out_path(g, p));
  if (!f) throw std::runtime_error("cannot write " + p);
  return f;
}

void write_json(const Globals& g, const std::string& p, const json& j) { write_json_file(out_path(g, p), j); }

std::vector<double> numbers(const std::string& s) {
  std::vector<double> v;
  for (auto& t : detail::split(s, ',')) v.push_back(parse_double(detail::trim(t)));
  return v;
}

EmpiricalVector vector_arg(const BlockModel& m, const std::string& s) {
  if (s == "uniform") return EmpiricalVector::uniform(m.block_count(), m.colors());
  return detail::init_vector(m, numbers(s));
}

std::vector<int> index_list(const std::string& s) {
  std::vector<int> v;
  if (s.empty()) return v;
  for (auto& t : detail::split(s, ',')) v.push_back(std::stoi(t));
  return v;
}

QpotOptions qpot_options(const Globals& g) {
  QpotOptions o;
  o.threads = g.threads;
  return o;
}

json dump_matrix(const CostMatrix& cm) {
  json a = json::array();
  for (int i = 0; i < cm.n; ++i) {
    std::vector<double> row(cm.v.begin() + i * cm.n, cm.v.begin() + (i + 1) * cm.n);
    a.push_back(jvec(row));
  }
  return a;
}

// Shared flags of the experiment subcommands; a config file is read first and flags override it.
struct ExperimentArgs {
  std::string config, model, out;
  std::vector<int> n;
  int replicas = 0, compact = -1;
  double horizon = 0, r0 = 0, r1 = 0;
  std::vector<std::string> inits;
  std::vector<double> times;
  std::uint64_t max_events = 0;
  bool avoiding = false;

  void add(CLI::App* app, const std::string& default_out) {
    out = default_out;
    app->add_option("--config", config, "experiment config (json)");
    app->add_option("--model", model, "model file (json)");
    app->add_option("--n", n, "population sizes")->delimiter(',');
    app->add_option("--replicas", replicas);
    app->add_option("--horizon", horizon);
    app->add_option("--r0", r0);
    app->add_option("--r1", r1);
    app->add_option("--compact", compact, "stable compact index");
    app->add_option("--init", inits, "initial vector(s), comma separated");
    app->add_option("--times", times, "probe times")->delimiter(',');
    app->add_option("--max-events", max_events);
    app->add_flag("--avoiding", avoiding);
    app->add_option("--out", out);
  }

  ExperimentConfig build(const std::string& kind, const Globals& g, CLI::App* app) const {
    json j = config.empty() ? json::object() : read_json_file(config);
    j["kind"] = kind;
    if (!model.empty()) j["model"] = fs::absolute(model).string();
    if (!n.empty()) j["n"] = n;
    if (replicas > 0) j["replicas"] = replicas;
    if (horizon > 0) j["horizon"] = horizon;
    if (r0 > 0) j["r0"] = r0;
    if (r1 > 0) j["r1"] = r1;
    if (compact >= 0) j["compact"] = compact;
    if (!inits.empty()) {
      json a = json::array();
      for (auto& s : inits) a.push_back(numbers(s));
      j["inits"] = a;
    }
    if (!times.empty()) j["probe_times"] = times;
    if (max_events > 0) j["max_events"] = max_events;
    if (avoiding) j["avoiding"] = true;
    if (app->get_parent()->count("--seed") || !j.contains("seed")) j["seed"] = g.seed;
    j["threads"] = g.threads;
    std::string dir = config.empty() ? "." : fs::path(config).parent_path().string();
    return experiment_from_json(j, dir.empty() ? "." : dir);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field jump processes on block graphs: simulation, action functionals and metastability."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "directory for relative output paths");
  app.set_version_flag("--version", version_string);

  // simulate
  auto* sim = app.add_subcommand("simulate", "aggregated (or per-node) jump process");
  std::string model_path, init_arg = "uniform", out, traj_prefix;
  int n = 100, replicas = 1;
  double horizon = 1, dt = 1e-3;
  bool per_node = false;
  sim->add_option("--model", model_path)->required();
  sim->add_option("--n", n)->required();
  sim->add_option("--horizon", horizon)->required();
  sim->add_option("--replicas", replicas);
  sim->add_option("--init", init_arg, "uniform or comma separated vector");
  sim->add_option("--out", out, "summary csv")->required();
  sim->add_option("--trajectories", traj_prefix, "write <prefix><replica>.csv per replica");
  sim->add_flag("--per-node", per_node);

  auto* ode = app.add_subcommand("ode", "McKean-Vlasov trajectory by RK4");
  ode->add_option("--model", model_path)->required();
  ode->add_option("--init", init_arg);
  ode->add_option("--horizon", horizon)->required();
  ode->add_option("--dt", dt);
  ode->add_option("--out", out)->required();

  auto* eq = app.add_subcommand("equilibria", "fixed points, stability and neighbourhood radii");
  double r0 = 0, r1 = 0;
  eq->add_option("--model", model_path)->required();
  eq->add_option("--r0", r0);
  eq->add_option("--r1", r1);
  eq->add_option("--out", out)->required();

  auto* act = app.add_subcommand("action", "action of a piecewise-linear path");
  std::string path_file, rates_file;
  bool auto_rates = false;
  act->add_option("--model", model_path)->required();
  act->add_option("--path", path_file)->required();
  auto* ro = act->add_option("--rates", rates_file);
  act->add_flag("--auto-rates", auto_rates, "optimal rates per segment (default without --rates)")->excludes(ro);
  act->add_option("--out", out)->required();

  auto* qp = app.add_subcommand("qpot", "pairwise quasipotential matrix between stable compacts");
  std::string catalog_file;
  bool avoiding = false;
  qp->add_option("--model", model_path)->required();
  qp->add_option("--catalog", catalog_file, "catalog json from equilibria; computed when omitted");
  qp->add_flag("--avoiding", avoiding);
  qp->add_option("--out", out)->required();

  auto* qpath = app.add_subcommand("qpot-path", "optimizing path between two vectors");
  std::string from_arg, to_arg, rates_out;
  qpath->add_option("--model", model_path)->required();
  qpath->add_option("--from", from_arg)->required();
  qpath->add_option("--to", to_arg)->required();
  qpath->add_option("--out", out)->required();
  qpath->add_option("--rates-out", rates_out);

  auto* fw = app.add_subcommand("fw", "W-graph quantities of a cost matrix");
  std::string matrix_file, op, w_arg;
  int fi = -1;
  fw->add_option("--matrix", matrix_file)->required();
  fw->add_option("--op", op)->required()->check(CLI::IsMember({"w", "I", "lambda"}));
  fw->add_option("--i", fi, "compact index (0-based)");
  fw->add_option("--W", w_arg, "comma separated index set");
  fw->add_option("--out", out)->required();

  auto* cy = app.add_subcommand("cycles", "cycle hierarchy of a cost matrix");
  double cn = 0;
  cy->add_option("--matrix", matrix_file)->required();
  cy->add_option("--n", cn, "adds exp(N V) exit times");
  cy->add_option("--out", out)->required();

  ExperimentArgs ex_exit, ex_occ, ex_probe, ex_lln, ex_run;
  auto* ee = app.add_subcommand("exit-scaling", "mean exit times against N");
  ex_exit.add(ee, "exit_scaling.json");
  auto* oc = app.add_subcommand("occupation", "long-run occupation of the compacts");
  ex_occ.add(oc, "occupation.json");
  auto* cp = app.add_subcommand("convergence-probe", "gap between averages from two starts");
  ex_probe.add(cp, "convergence_probe.json");
  auto* ll = app.add_subcommand("lln", "sup distance between jump paths and the ODE");
  ex_lln.add(ll, "lln.json");
  auto* run = app.add_subcommand("run", "run an experiment config of any kind");
  ex_run.add(run, "report.json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      BlockModel m = load_model(model_path);
      auto init = counts_from_fractions(m, vector_arg(m, init_arg), n);
      std::vector<EmpiricalVector> terminal(replicas);
      std::vector<TrajectoryRecord> recs(traj_prefix.empty() ? 0 : replicas);
      parallel_for(replicas, g.threads, [&](int r) {
        auto s = substream_seed(g.seed, n, r);
        TrajectoryRecord rec = per_node ? simulate_per_node(m, init, horizon, s) : simulate(m, init, horizon, s);
        terminal[r] = empirical_at(rec, horizon);
        if (!traj_prefix.empty()) recs[r] = std::move(rec);
      });
      auto f = open_out(g, out);
      write_summary(f, m.layout(), terminal);
      for (std::size_t r = 0; r < recs.size(); ++r) {
        auto t = open_out(g, traj_prefix + std::to_string(r) + ".csv");
        write_trajectory(t, recs[r]);
      }
    } else if (*ode) {
      BlockModel m = load_model(model_path);
      auto sol = integrate(m, vector_arg(m, init_arg), horizon, dt);
      auto f = open_out(g, out);
      write_path(f, sol.times, sol.states);
    } else if (*eq) {
      BlockModel m = load_model(model_path);
      EquilibriumOptions eo;
      eo.r0 = r0;
      eo.r1 = r1;
      write_json(g, out, catalog_to_json(find_equilibria(m, {}, eo)));
    } else if (*act) {
      BlockModel m = load_model(model_path);
      std::ifstream pf(path_file);
      if (!pf) throw std::runtime_error("cannot open " + path_file);
      PathGrid p = read_path(pf);
      RateMatrixPath rates;
      if (!rates_file.empty()) {
        std::ifstream rf(rates_file);
        if (!rf) throw std::runtime_error("cannot open " + rates_file);
        rates = read_rates(rf);
      } else {
        rates = optimal_rates(m, p);
      }
      write_json(g, out, {{"schema", "mfmeta.action/1"},
                          {"value", jnum(action(m, p, rates))},
                          {"rates", rates_file.empty() ? "optimal" : "given"},
                          {"segments", p.segments()},
                          {"horizon", p.horizon()}});
    } else if (*qp) {
      BlockModel m = load_model(model_path);
      CompactCatalog full = catalog_file.empty() ? find_equilibria(m, {}) : catalog_from_json(read_json_file(catalog_file));
      auto costs = compact_cost_matrix(m, full.stable_only(), avoiding ? CostMode::avoiding : CostMode::direct,
                                       qpot_options(g), saddle_points(full));
      auto f = open_out(g, out);
      write_matrix(f, costs.matrix);
    } else if (*qpath) {
      BlockModel m = load_model(model_path);
      auto r = quasipotential(m, vector_arg(m, from_arg), vector_arg(m, to_arg), qpot_options(g));
      auto f = open_out(g, out);
      f << "# value=" << fmt(r.value) << " horizon=" << fmt(r.horizon) << " converged=" << r.diagnostics.converged << "\n";
      write_path(f, r.path);
      if (!rates_out.empty()) {
        auto rf = open_out(g, rates_out);
        write_rates(rf, m.graph, m.layout(), r.rates);
      }
    } else if (*fw) {
      CostMatrix cm = read_matrix_file(matrix_file);
      json j = {{"schema", "mfmeta.fw/1"}, {"op", op}, {"matrix", dump_matrix(cm)}};
      if (op == "lambda") {
        j["lambda"] = jnum(lambda_constant(cm));
      } else if (op == "w") {
        std::vector<double> w(cm.n);
        for (int i = 0; i < cm.n; ++i) w[i] = w_value(cm, i);
        j["w"] = jvec(w);
        j["s"] = jvec(invariant_rates(cm));
        if (fi >= 0) j["w_i"] = jnum(w.at(fi));
      } else {
        if (fi < 0) throw std::invalid_argument("--op I needs --i");
        auto W = index_list(w_arg);
        auto e = exponents_I(cm, fi, W);
        j["i"] = fi;
        j["W"] = W;
        j["I"] = jnum(e.I);
        j["targets"] = e.targets;
        j["I_to"] = jvec(e.I_to);
      }
      write_json(g, out, j);
    } else if (*cy) {
      write_json(g, out, hierarchy_to_json(build_hierarchy(read_matrix_file(matrix_file)), cn));
    } else {
      std::pair<CLI::App*, std::pair<ExperimentArgs*, const char*>> kinds[] = {
          {ee, {&ex_exit, "exit_scaling"}},
          {oc, {&ex_occ, "invariant_occupation"}},
          {cp, {&ex_probe, "convergence_probe"}},
          {ll, {&ex_lln, "lln"}},
          {run, {&ex_run, ""}}};
      for (auto& [sub, entry] : kinds) {
        if (!*sub) continue;
        std::string kind = entry.second;
        if (kind.empty()) {
          if (entry.first->config.empty()) throw std::invalid_argument("run needs --config");
          kind = read_json_file(entry.first->config).at("kind").get<std::string>();
        }
        ExperimentConfig c = entry.first->build(kind, g, sub);
        auto rep = run_experiment(c, qpot_options(g));
        write_json(g, entry.first->out, rep.to_json());
        std::cerr << kind << " finished in " << rep.wall_seconds << " s\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
