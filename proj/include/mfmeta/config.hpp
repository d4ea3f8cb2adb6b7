#ifndef MFMETA_CONFIG_HPP
#define MFMETA_CONFIG_HPP

#include <fstream>
#include <json.hpp>

#include "model.hpp"

namespace mfmeta {

using json = nlohmann::json;

inline constexpr const char* model_schema = "mfmeta.model/1";

namespace detail {

inline ArgRef parse_arg(const json& a) {
  // ["c", z] | ["p", z] | ["p3", z]
  std::string who = a.at(0).get<std::string>();
  int color = a.at(1).get<int>();
  if (who == "c") return {ArgRef::own_central, 0, color};
  if (who == "p") return {ArgRef::own_peripheral, 0, color};
  if (who.size() > 1 && who[0] == 'p') return {ArgRef::peripheral_block, std::stoi(who.substr(1)), color};
  throw std::invalid_argument("unknown rate argument '" + who + "'");
}

inline json dump_arg(const ArgRef& a) {
  std::string who = a.kind == ArgRef::own_central ? "c"
                    : a.kind == ArgRef::own_peripheral ? "p"
                                                       : "p" + std::to_string(a.block);
  return json::array({who, a.color});
}

inline std::vector<ParametricRate> parse_edge_rates(const json& list, const ColorGraph& g) {
  std::vector<ParametricRate> out(g.edge_count());
  std::vector<char> seen(g.edge_count(), 0);
  for (auto& item : list) {
    int from = item.at("edge").at(0).get<int>(), to = item.at("edge").at(1).get<int>();
    int e = g.edge_index(from, to);
    if (e < 0) throw std::invalid_argument("rate given for an inadmissible edge");
    seen[e] = 1;
    ParametricRate& r = out[e];
    r.base = item.value("base", 0.0);
    if (item.contains("terms")) {
      for (auto& t : item["terms"]) {
        RateTerm term;
        term.coef = t.at("coef").get<double>();
        auto& args = t.at("args");
        if (args.size() < 1 || args.size() > 2) throw std::invalid_argument("a rate term takes 1 or 2 arguments");
        term.a = parse_arg(args[0]);
        if (args.size() == 2) term.b = parse_arg(args[1]);
        r.terms.push_back(term);
      }
    }
  }
  for (int e = 0; e < g.edge_count(); ++e)
    if (!seen[e])
      throw std::invalid_argument("no rate given for edge (" + std::to_string(g.edge(e).from) + "," +
                                  std::to_string(g.edge(e).to) + ")");
  return out;
}

inline json dump_edge_rates(const std::vector<ParametricRate>& rates, const ColorGraph& g) {
  json list = json::array();
  for (int e = 0; e < g.edge_count(); ++e) {
    json item;
    item["edge"] = {g.edge(e).from, g.edge(e).to};
    item["base"] = rates[e].base;
    json terms = json::array();
    for (auto& t : rates[e].terms) {
      json args = json::array({dump_arg(t.a)});
      if (t.b) args.push_back(dump_arg(*t.b));
      terms.push_back({{"coef", t.coef}, {"args", args}});
    }
    item["terms"] = terms;
    list.push_back(item);
  }
  return list;
}

}  // namespace detail

// Builds a model without validating it; see validate_model.
inline BlockModel model_from_json(const json& j) {
  BlockModel m;
  int k = j.at("colors").get<int>();
  std::vector<Edge> es;
  if (j.contains("edges")) {
    for (auto& e : j["edges"]) es.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
    m.graph = ColorGraph(k, es);
  } else {
    m.graph = ColorGraph::complete(k);
  }
  for (auto& b : j.at("blocks")) {
    BlockParams p;
    p.alpha = b.at("alpha").get<double>();
    p.p_central = b.at("p_central").get<double>();
    p.p_peripheral = b.value("p_peripheral", 1.0 - p.p_central);
    m.blocks.push_back(p);
  }
  const json& r = j.at("rates");
  m.rates.lower_bound = r.at("lower_bound").get<double>();
  m.rates.upper_bound = r.at("upper_bound").get<double>();
  const char* names[2] = {"central", "peripheral"};
  for (int cat = 0; cat < 2; ++cat) {
    std::string by_block = std::string(names[cat]) + "_by_block";
    if (r.contains(by_block)) {
      for (auto& blk : r[by_block]) m.rates.parametric[cat].push_back(detail::parse_edge_rates(blk, m.graph));
    } else {
      auto shared = detail::parse_edge_rates(r.at(names[cat]), m.graph);
      m.rates.parametric[cat].assign(m.blocks.size(), shared);
    }
  }
  return m;
}

inline json model_to_json(const BlockModel& m) {
  json j;
  j["schema"] = model_schema;
  j["colors"] = m.colors();
  json es = json::array();
  for (auto& e : m.graph.edges()) es.push_back({e.from, e.to});
  j["edges"] = es;
  json bs = json::array();
  for (auto& b : m.blocks) bs.push_back({{"alpha", b.alpha}, {"p_central", b.p_central}, {"p_peripheral", b.p_peripheral}});
  j["blocks"] = bs;
  json r;
  r["lower_bound"] = m.rates.lower_bound;
  r["upper_bound"] = m.rates.upper_bound;
  const char* names[2] = {"central_by_block", "peripheral_by_block"};
  for (int cat = 0; cat < 2; ++cat) {
    json blocks = json::array();
    for (auto& per_edge : m.rates.parametric[cat]) blocks.push_back(detail::dump_edge_rates(per_edge, m.graph));
    r[names[cat]] = blocks;
  }
  j["rates"] = r;
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

// Parses and validates.
inline BlockModel load_model(const std::string& path) {
  BlockModel m = model_from_json(read_json_file(path));
  require_valid(m);
  return m;
}

}  // namespace mfmeta

#endif
