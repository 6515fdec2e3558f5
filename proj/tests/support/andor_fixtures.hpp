#pragma once

#include <random>
#include <vector>

#include "glvm/andor.hpp"

namespace glvm::testing {

inline FeatureGrid random_grid(std::mt19937_64& rng, int rows, int cols, int ch) {
  std::normal_distribution<double> g;
  FeatureGrid x(rows, cols, ch);
  for (auto& v : x.data) v = g(rng);
  return x;
}

// Random tree with depth <= max_depth and fan-out <= max_fan; no sharing.
struct TreeGen {
  std::mt19937_64& rng;
  int max_depth = 4;
  int max_fan = 4;
  int rows = 4, cols = 4, ch = 2;

  int grow(AndOrTree& t, int depth) {
    std::uniform_int_distribution<int> kind(0, 3);
    const int k = depth >= max_depth ? 0 : kind(rng);
    if (k == 0) {
      std::uniform_int_distribution<int> h(1, 2);
      PatchSelector p{0, 0, h(rng), h(rng)};
      p.row = std::uniform_int_distribution<int>(0, rows - p.rows)(rng);
      p.col = std::uniform_int_distribution<int>(0, cols - p.cols)(rng);
      std::normal_distribution<double> g;
      std::vector<double> w(static_cast<std::size_t>(p.rows * p.cols * ch));
      for (auto& v : w) v = g(rng);
      return t.add_terminal(p, std::move(w));
    }
    const int fan = std::uniform_int_distribution<int>(1, max_fan)(rng);
    std::vector<int> ch_ids;
    for (int i = 0; i < fan; ++i) ch_ids.push_back(grow(t, depth + 1));
    return t.add(k == 1 ? NodeKind::and_node : k == 2 ? NodeKind::or_node : NodeKind::nor_node, ch_ids);
  }

  AndOrTree operator()() {
    AndOrTree t;
    t.input_rows = rows;
    t.input_cols = cols;
    t.input_channels = ch;
    t.root = grow(t, 0);
    return t;
  }
};

// Plain top-down recursion, recomputing every subtree.
inline double naive(const AndOrTree& t, const FeatureGrid& g, int u, std::vector<int>& chosen) {
  const auto& v = t.nodes[static_cast<std::size_t>(u)];
  if (v.kind == NodeKind::terminal) {
    double s = 0;
    std::size_t k = 0;
    for (int r = v.patch.row; r < v.patch.row + v.patch.rows; ++r)
      for (int c = v.patch.col; c < v.patch.col + v.patch.cols; ++c)
        for (int f = 0; f < g.channels; ++f) s += v.weight[k++] * g.at(r, c, f);
    return s;
  }
  std::vector<double> vals;
  for (int c : v.children) vals.push_back(naive(t, g, c, chosen));
  if (v.kind == NodeKind::and_node) {
    double s = 0;
    for (double x : vals) s += x;
    return s;
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i)
    if (v.kind == NodeKind::or_node ? vals[i] > vals[best] : vals[i] < vals[best]) best = i;
  chosen[static_cast<std::size_t>(u)] = static_cast<int>(best);
  return vals[best];
}

}  // namespace glvm::testing
