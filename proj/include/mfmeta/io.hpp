#ifndef MFMETA_IO_HPP
#define MFMETA_IO_HPP

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "action.hpp"
#include "config.hpp"
#include "cycles.hpp"
#include "fw.hpp"
#include "mvode.hpp"
#include "sim.hpp"

namespace mfmeta {

inline constexpr const char* trajectory_schema = "mfmeta.trajectory/1";
inline constexpr const char* summary_schema = "mfmeta.summary/1";
inline constexpr const char* path_schema = "mfmeta.path/1";
inline constexpr const char* rates_schema = "mfmeta.rates/1";
inline constexpr const char* matrix_schema = "mfmeta.matrix/1";
inline constexpr const char* catalog_schema = "mfmeta.catalog/1";
inline constexpr const char* hierarchy_schema = "mfmeta.cycles/1";

// Shortest text that reads back to the same double; inf/nan spelled out.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "inf" || s == "+inf" || s == "Inf") return infinity;
  if (s == "-inf" || s == "-Inf") return -infinity;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

// JSON has no infinity; non-finite values travel as strings.
inline json jnum(double x) { return std::isfinite(x) ? json(x) : json(fmt(x)); }
inline double jget(const json& j) { return j.is_string() ? parse_double(j.get<std::string>()) : j.get<double>(); }

inline json jvec(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(jnum(x));
  return a;
}

inline std::vector<double> jvec_get(const json& j) {
  std::vector<double> v;
  for (auto& x : j) v.push_back(jget(x));
  return v;
}

struct CsvTable {
  std::string schema;
  std::map<std::string, std::string> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("missing column " + name);
  }
  const std::string& at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::invalid_argument("missing metadata " + key);
    return it->second;
  }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::vector<int> ints(const std::string& s) {
  std::vector<int> v;
  for (auto& t : split(s, ',')) v.push_back(std::stoi(t));
  return v;
}

inline std::vector<std::string> measure_columns(Layout l) {
  std::vector<std::string> h;
  for (int c = 0; c < l.components(); ++c)
    for (int z = 0; z < l.colors; ++z)
      h.push_back("b" + std::to_string(Layout::block_of(c)) + (c % 2 == 0 ? "c" : "p") + std::to_string(z));
  return h;
}

}  // namespace detail

// Lines starting with '#' carry "key=value" metadata; the first names the schema.
// With header = false every non-comment line is data.
inline CsvTable read_csv(std::istream& in, bool header = true) {
  CsvTable t;
  std::string line;
  bool got_header = !header;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ws(line.substr(1));
      std::string kv;
      while (ws >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
        if (k == "schema") t.schema = v;
        else t.meta[k] = v;
      }
      continue;
    }
    auto cells = detail::split(line, ',');
    for (auto& c : cells) c = detail::trim(c);
    if (!got_header) {
      t.header = cells;
      got_header = true;
    } else {
      t.rows.push_back(cells);
    }
  }
  return t;
}

inline CsvTable read_csv_file(const std::string& path, bool header = true) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_csv(in, header);
}

inline void expect_schema(const CsvTable& t, const char* schema) {
  if (!t.schema.empty() && t.schema != schema)
    throw std::invalid_argument("expected schema " + std::string(schema) + ", got " + t.schema);
}

// ---- trajectories ------------------------------------------------------

inline void write_trajectory(std::ostream& out, const TrajectoryRecord& r) {
  const auto& pc = r.initial;
  out << "# schema=" << trajectory_schema << "\n";
  out << "# blocks=" << pc.layout.blocks << " colors=" << pc.layout.colors << " sizes=" << detail::join(pc.sizes)
      << " counts=" << detail::join(pc.counts) << " horizon=" << fmt(r.horizon)
      << " budget_exhausted=" << (r.budget_exhausted ? 1 : 0) << "\n";
  out << "time,block,category,from,to\n";
  for (auto& e : r.events)
    out << fmt(e.time) << "," << e.block << "," << (e.category == Category::central ? "central" : "peripheral") << ","
        << e.from << "," << e.to << "\n";
}

inline TrajectoryRecord read_trajectory(std::istream& in) {
  CsvTable t = read_csv(in);
  expect_schema(t, trajectory_schema);
  TrajectoryRecord r;
  r.initial.layout = {std::stoi(t.at("blocks")), std::stoi(t.at("colors"))};
  r.initial.sizes = detail::ints(t.at("sizes"));
  r.initial.counts = detail::ints(t.at("counts"));
  r.horizon = parse_double(t.at("horizon"));
  r.budget_exhausted = t.meta.count("budget_exhausted") && t.at("budget_exhausted") == "1";
  int ct = t.column("time"), cb = t.column("block"), cc = t.column("category"), cf = t.column("from"), co = t.column("to");
  for (auto& row : t.rows) {
    Event e;
    e.time = parse_double(row.at(ct));
    e.block = std::stoi(row.at(cb));
    e.category = row.at(cc) == "central" || row.at(cc) == "c" ? Category::central : Category::peripheral;
    e.from = std::stoi(row.at(cf));
    e.to = std::stoi(row.at(co));
    r.events.push_back(e);
  }
  return r;
}

// replica, terminal empirical vector entries
inline void write_summary(std::ostream& out, Layout l, const std::vector<EmpiricalVector>& terminal) {
  out << "# schema=" << summary_schema << "\n# blocks=" << l.blocks << " colors=" << l.colors << "\n";
  out << "replica," << detail::join(detail::measure_columns(l)) << "\n";
  for (std::size_t r = 0; r < terminal.size(); ++r) {
    out << r;
    for (double x : terminal[r].values()) out << "," << fmt(x);
    out << "\n";
  }
}

// ---- paths -------------------------------------------------------------

inline void write_path(std::ostream& out, const std::vector<double>& times, const std::vector<EmpiricalVector>& knots) {
  Layout l = knots.front().layout();
  out << "# schema=" << path_schema << "\n# blocks=" << l.blocks << " colors=" << l.colors << "\n";
  out << "time," << detail::join(detail::measure_columns(l)) << "\n";
  for (std::size_t i = 0; i < times.size(); ++i) {
    out << fmt(times[i]);
    for (double x : knots[i].values()) out << "," << fmt(x);
    out << "\n";
  }
}

inline void write_path(std::ostream& out, const PathGrid& p) { write_path(out, p.times, p.knots); }

inline PathGrid read_path(std::istream& in) {
  CsvTable t = read_csv(in);
  expect_schema(t, path_schema);
  int cols = static_cast<int>(t.header.size()) - 1;
  Layout l;
  if (t.meta.count("blocks")) {
    l = {std::stoi(t.at("blocks")), std::stoi(t.at("colors"))};
  } else {
    throw std::invalid_argument("path file needs blocks/colors metadata");
  }
  if (cols != l.size()) throw std::invalid_argument("path file: column count does not match blocks*2*colors");
  PathGrid p;
  for (auto& row : t.rows) {
    p.times.push_back(parse_double(row.at(0)));
    std::vector<double> x(cols);
    for (int i = 0; i < cols; ++i) x[i] = parse_double(row.at(i + 1));
    p.knots.emplace_back(l.blocks, l.colors, std::move(x));
  }
  p.check();
  return p;
}

// segment, then one column per (component, edge)
inline void write_rates(std::ostream& out, const ColorGraph& g, Layout l, const RateMatrixPath& r) {
  out << "# schema=" << rates_schema << "\n# blocks=" << l.blocks << " colors=" << l.colors
      << " edges=" << g.edge_count() << "\n";
  out << "segment";
  for (int c = 0; c < l.components(); ++c)
    for (int e = 0; e < g.edge_count(); ++e)
      out << ",b" << Layout::block_of(c) << (c % 2 == 0 ? "c" : "p") << g.edge(e).from << "-" << g.edge(e).to;
  out << "\n";
  for (std::size_t s = 0; s < r.segments.size(); ++s) {
    out << s;
    for (double x : r.segments[s]) out << "," << fmt(x);
    out << "\n";
  }
}

inline RateMatrixPath read_rates(std::istream& in) {
  CsvTable t = read_csv(in);
  expect_schema(t, rates_schema);
  RateMatrixPath r;
  r.edges = std::stoi(t.at("edges"));
  for (auto& row : t.rows) {
    std::vector<double> v;
    for (std::size_t i = 1; i < row.size(); ++i) v.push_back(parse_double(row[i]));
    r.segments.push_back(std::move(v));
  }
  return r;
}

// ---- matrices ----------------------------------------------------------

inline void write_matrix(std::ostream& out, const CostMatrix& cm) {
  out << "# schema=" << matrix_schema << " size=" << cm.n << "\n";
  for (int i = 0; i < cm.n; ++i) {
    for (int j = 0; j < cm.n; ++j) out << (j ? "," : "") << fmt(cm(i, j));
    out << "\n";
  }
}

// Square table of numbers; `inf` allowed; comment lines ignored.
inline CostMatrix read_matrix(std::istream& in) {
  CsvTable t = read_csv(in, false);
  expect_schema(t, matrix_schema);
  int n = static_cast<int>(t.rows.size());
  std::vector<double> v;
  for (auto& row : t.rows) {
    if (static_cast<int>(row.size()) != n) throw std::invalid_argument("matrix must be square");
    for (auto& c : row) v.push_back(parse_double(c));
  }
  return CostMatrix(n, v);
}

inline CostMatrix read_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_matrix(in);
}

// ---- JSON documents ----------------------------------------------------

inline json catalog_to_json(const CompactCatalog& c) {
  json j;
  j["schema"] = catalog_schema;
  j["r0"] = jnum(c.r0);
  j["r1"] = jnum(c.r1);
  j["metric"] = "max over components of the sup norm";
  json pts = json::array();
  for (auto& p : c.points) {
    Layout l = p.point.layout();
    pts.push_back({{"blocks", l.blocks},
                   {"colors", l.colors},
                   {"point", jvec(p.point.values())},
                   {"stable", p.stable},
                   {"spectral_abscissa", jnum(p.spectral_abscissa)}});
  }
  j["points"] = pts;
  return j;
}

inline CompactCatalog catalog_from_json(const json& j) {
  if (j.contains("schema") && j["schema"] != catalog_schema) throw std::invalid_argument("not a catalog document");
  CompactCatalog c;
  c.r0 = jget(j.at("r0"));
  c.r1 = jget(j.at("r1"));
  for (auto& p : j.at("points")) {
    FixedPoint f;
    f.point = EmpiricalVector(p.at("blocks").get<int>(), p.at("colors").get<int>(), jvec_get(p.at("point")));
    f.stable = p.at("stable").get<bool>();
    f.spectral_abscissa = jget(p.at("spectral_abscissa"));
    c.points.push_back(std::move(f));
  }
  return c;
}

inline json hierarchy_to_json(const CycleHierarchy& h, double N = 0) {
  json j;
  j["schema"] = hierarchy_schema;
  j["degenerate"] = h.degenerate;
  j["height"] = h.height();
  json levels = json::array();
  for (auto& lv : h.levels) {
    json L;
    L["elements"] = lv.compacts;
    L["members"] = lv.members;
    L["formed"] = std::vector<bool>(lv.formed.begin(), lv.formed.end());
    L["arrow"] = lv.arrow;
    L["tied"] = std::vector<bool>(lv.tied.begin(), lv.tied.end());
    L["v_hat"] = jvec(lv.v_hat);
    L["v_exit"] = jvec(lv.v_exit);
    json pair = json::array();
    for (int p = 0; p < lv.size(); ++p) {
      std::vector<double> row(lv.v_pair.begin() + p * lv.size(), lv.v_pair.begin() + (p + 1) * lv.size());
      pair.push_back(jvec(row));
    }
    L["v_pair"] = pair;
    levels.push_back(L);
  }
  j["levels"] = levels;
  json ex = json::array();
  for (auto& r : exit_predictions(h, N)) {
    json e = {{"level", r.level},
              {"element", r.element},
              {"compacts", r.compacts},
              {"exit_exponent", jnum(r.exponent)},
              {"targets", r.targets},
              {"transition_exponents", jvec(r.target_exponents)}};
    if (N > 0) e["mean_exit_time"] = jnum(r.mean_exit_time);
    ex.push_back(e);
  }
  j["exits"] = ex;
  if (N > 0) j["n"] = N;
  return j;
}

}  // namespace mfmeta

#endif
