#ifndef MFMETA_FIXTURES_HPP
#define MFMETA_FIXTURES_HPP

#include "model.hpp"

namespace mfmeta {

// One block, two colors.  Both categories flip with
//   0 -> 1 at a0 + b * m(1)^2,   1 -> 0 at a1 + b * m(0)^2,
// where m = p_c * mu^c + p_p * mu^p is the block mixture.
inline BlockModel bistable_model(double a0 = 0.1, double a1 = 0.1, double b = 1.5, double p_central = 0.5) {
  BlockModel m;
  m.graph = ColorGraph(2, {{0, 1}, {1, 0}});
  m.blocks = {{1.0, p_central, 1.0 - p_central}};
  m.rates.lower_bound = std::min(a0, a1);
  m.rates.upper_bound = std::max(a0, a1) + b;
  double pc = p_central, pp = 1.0 - p_central;
  auto square_of_mixture = [&](int color, double base) {
    ParametricRate r;
    r.base = base;
    ArgRef c{ArgRef::own_central, 0, color}, p{ArgRef::own_peripheral, 0, color};
    r.terms.push_back({b * pc * pc, c, c});
    r.terms.push_back({2 * b * pc * pp, c, p});
    r.terms.push_back({b * pp * pp, p, p});
    return r;
  };
  std::vector<ParametricRate> per_edge = {square_of_mixture(1, a0), square_of_mixture(0, a1)};
  for (int cat = 0; cat < 2; ++cat) m.rates.parametric[cat] = {per_edge};
  return m;
}

// Every admissible edge at the same constant rate.
inline BlockModel constant_rate_model(const ColorGraph& g, double rate, int blocks = 1) {
  BlockModel m;
  m.graph = g;
  for (int j = 0; j < blocks; ++j) m.blocks.push_back({1.0 / blocks, 0.5, 0.5});
  m.rates.lower_bound = rate;
  m.rates.upper_bound = rate;
  std::vector<ParametricRate> per_edge(g.edge_count(), ParametricRate{rate, {}});
  for (int cat = 0; cat < 2; ++cat) m.rates.parametric[cat].assign(blocks, per_edge);
  return m;
}

}  // namespace mfmeta

#endif
