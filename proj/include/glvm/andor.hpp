#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "glvm/errors.hpp"
#include "glvm/latent.hpp"
#include "glvm/linalg.hpp"
#include "glvm/synth.hpp"

namespace glvm {

enum class NodeKind { terminal, and_node, or_node, nor_node };

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::terminal: return "terminal";
    case NodeKind::and_node: return "and";
    case NodeKind::or_node: return "or";
    case NodeKind::nor_node: return "nor";
  }
  return "?";
}

/// Cell window [row, row + rows) x [col, col + cols) of the input grid.
struct PatchSelector {
  int row = 0;
  int col = 0;
  int rows = 1;
  int cols = 1;
  bool operator==(const PatchSelector&) const = default;
};

struct AndOrNode {
  NodeKind kind = NodeKind::terminal;
  std::vector<int> children;   // And / Or / Nor
  std::vector<double> weight;  // Terminal: rows * cols * channels, row-major like the grid
  PatchSelector patch;         // Terminal
  bool operator==(const AndOrNode&) const = default;
};

struct AndOrTree {
  std::vector<AndOrNode> nodes;
  int root = 0;
  int input_rows = 0;
  int input_cols = 0;
  int input_channels = 0;

  int add_terminal(PatchSelector p, std::vector<double> w) {
    nodes.push_back({NodeKind::terminal, {}, std::move(w), p});
    return static_cast<int>(nodes.size()) - 1;
  }
  int add(NodeKind k, std::vector<int> children) {
    nodes.push_back({k, std::move(children), {}, {}});
    return static_cast<int>(nodes.size()) - 1;
  }
  bool operator==(const AndOrTree&) const = default;
};

struct TreeDiagnostic {
  int node = -1;  // -1 for tree-level problems
  std::string message;
};

inline std::vector<TreeDiagnostic> validate_tree(const AndOrTree& t) {
  std::vector<TreeDiagnostic> out;
  const int n = static_cast<int>(t.nodes.size());
  if (n == 0) return {{-1, "tree has no nodes"}};
  if (t.root < 0 || t.root >= n) out.push_back({-1, "root index " + std::to_string(t.root) + " out of range"});
  if (t.input_rows <= 0 || t.input_cols <= 0 || t.input_channels <= 0)
    out.push_back({-1, "input dimensions must be positive"});
  bool links_ok = true;
  for (int i = 0; i < n; ++i) {
    const auto& v = t.nodes[static_cast<std::size_t>(i)];
    const std::string name = "node " + std::to_string(i) + " (" + to_string(v.kind) + ")";
    if (v.kind == NodeKind::terminal) {
      if (!v.children.empty()) out.push_back({i, name + " has children"});
      const auto& p = v.patch;
      if (p.rows <= 0 || p.cols <= 0 || p.row < 0 || p.col < 0 || p.row + p.rows > t.input_rows ||
          p.col + p.cols > t.input_cols)
        out.push_back({i, name + " selector out of bounds"});
      else if (v.weight.size() != static_cast<std::size_t>(p.rows) * p.cols * std::max(t.input_channels, 0))
        out.push_back({i, name + " weight length " + std::to_string(v.weight.size()) + " does not match its patch"});
      continue;
    }
    if (v.children.empty()) out.push_back({i, name + " has no children"});
    for (int c : v.children)
      if (c < 0 || c >= n) {
        out.push_back({i, name + " child index " + std::to_string(c) + " out of range"});
        links_ok = false;
      }
  }
  if (!links_ok) return out;
  // iterative three-colour depth-first search over all nodes
  std::vector<int> colour(static_cast<std::size_t>(n), 0);
  for (int s = 0; s < n; ++s) {
    if (colour[static_cast<std::size_t>(s)]) continue;
    std::vector<std::pair<int, std::size_t>> stack{{s, 0}};
    colour[static_cast<std::size_t>(s)] = 1;
    while (!stack.empty()) {
      auto& [u, k] = stack.back();
      const auto& ch = t.nodes[static_cast<std::size_t>(u)].children;
      if (k == ch.size()) {
        colour[static_cast<std::size_t>(u)] = 2;
        stack.pop_back();
        continue;
      }
      const int c = ch[k++];
      if (colour[static_cast<std::size_t>(c)] == 1) {
        out.push_back({c, "cycle through node " + std::to_string(c) + " (reached again from node " +
                              std::to_string(u) + ")"});
        return out;
      }
      if (colour[static_cast<std::size_t>(c)] == 0) {
        colour[static_cast<std::size_t>(c)] = 1;
        stack.push_back({c, 0});
      }
    }
  }
  return out;
}

inline void check_tree(const AndOrTree& t) {
  const auto d = validate_tree(t);
  if (!d.empty()) throw MisuseError("invalid and-or tree: " + d.front().message);
}

inline double terminal_response(const AndOrNode& v, const FeatureGrid& g) {
  const auto& p = v.patch;
  double s = 0.0;
  std::size_t k = 0;
  for (int r = 0; r < p.rows; ++r)
    for (int c = 0; c < p.cols; ++c) {
      const double* cell = g.cell(p.row + r, p.col + c);
      for (int f = 0; f < g.channels; ++f) s += v.weight[k++] * cell[f];
    }
  return s;
}

struct TreeScore {
  double root = 0.0;
  std::vector<double> node;  // score of every node
  std::vector<int> chosen;   // Or / Nor: position in the children list; -1 elsewhere
};

/// Node indices with every child before its parent.
inline std::vector<int> bottom_up_order(const AndOrTree& t) {
  const std::size_t n = t.nodes.size();
  std::vector<char> done(n, 0);
  std::vector<int> order;
  order.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    if (done[s]) continue;
    std::vector<std::pair<int, std::size_t>> stack{{static_cast<int>(s), 0}};
    done[s] = 1;
    while (!stack.empty()) {
      auto& [u, k] = stack.back();
      const auto& ch = t.nodes[static_cast<std::size_t>(u)].children;
      if (k == ch.size()) {
        order.push_back(u);
        stack.pop_back();
        continue;
      }
      const int c = ch[k++];
      if (!done[static_cast<std::size_t>(c)]) {
        done[static_cast<std::size_t>(c)] = 1;
        stack.push_back({c, 0});
      }
    }
  }
  return order;
}

/// Terminal: w . I(T); And: sum; Or: max; Nor: min. Ties at Or / Nor go to
/// the earliest child.
inline TreeScore evaluate(const AndOrTree& t, const FeatureGrid& g) {
  check_tree(t);
  if (g.rows != t.input_rows || g.cols != t.input_cols || g.channels != t.input_channels)
    throw MisuseError("evaluate: input grid " + std::to_string(g.rows) + "x" + std::to_string(g.cols) + "x" +
                      std::to_string(g.channels) + " differs from the tree's declared input");
  TreeScore s;
  s.node.assign(t.nodes.size(), 0.0);
  s.chosen.assign(t.nodes.size(), -1);
  for (int u : bottom_up_order(t)) {
    const auto& v = t.nodes[static_cast<std::size_t>(u)];
    double& out = s.node[static_cast<std::size_t>(u)];
    switch (v.kind) {
      case NodeKind::terminal: out = terminal_response(v, g); break;
      case NodeKind::and_node:
        out = 0.0;
        for (int c : v.children) out += s.node[static_cast<std::size_t>(c)];
        break;
      case NodeKind::or_node:
      case NodeKind::nor_node: {
        const bool maxing = v.kind == NodeKind::or_node;
        int arg = 0;
        for (int k = 1; k < static_cast<int>(v.children.size()); ++k) {
          const double x = s.node[static_cast<std::size_t>(v.children[static_cast<std::size_t>(k)])];
          const double b = s.node[static_cast<std::size_t>(v.children[static_cast<std::size_t>(arg)])];
          if (maxing ? x > b : x < b) arg = k;
        }
        out = s.node[static_cast<std::size_t>(v.children[static_cast<std::size_t>(arg)])];
        s.chosen[static_cast<std::size_t>(u)] = arg;
        break;
      }
    }
  }
  s.root = s.node[static_cast<std::size_t>(t.root)];
  return s;
}

/// The tree as a latent model: every Or node is a positive latent variable
/// and every Nor node a negative one, choosing among its children; terminal
/// weights are concatenated into the block of the nearest Or / Nor above
/// them (or of a one-state positive variable standing for the root).
/// Requires a proper tree: no node may have two parents.
struct TreeLatentModel {
  LatentSpec spec;
  BlockLayout layout;
  std::vector<int> var_of_node;      // -1 for And / Terminal
  std::vector<int> owner;            // Terminal -> variable owning its weights, -1 off the root's subtree
  std::vector<std::size_t> offset;   // Terminal -> offset of its weights in w
  std::vector<int> node_of_var;      // -1 for the root variable
  std::vector<int> parent_node;      // parent of every node, -1 at the root

  /// phi(x, z): patch features of the terminals of the parse tree picked by z.
  Vector features(const AndOrTree& t, const FeatureGrid& g, const LatentAssignment& z) const {
    Vector phi(layout.total_dim(), 0.0);
    std::vector<int> stack{t.root};
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      const auto& v = t.nodes[static_cast<std::size_t>(u)];
      if (v.kind == NodeKind::terminal) {
        std::size_t k = offset[static_cast<std::size_t>(u)];
        for (int r = 0; r < v.patch.rows; ++r)
          for (int c = 0; c < v.patch.cols; ++c) {
            const double* cell = g.cell(v.patch.row + r, v.patch.col + c);
            for (int f = 0; f < g.channels; ++f) phi[k++] = cell[f];
          }
      } else if (v.kind == NodeKind::and_node) {
        for (int c : v.children) stack.push_back(c);
      } else {
        const int choice = z[var_of_node[static_cast<std::size_t>(u)]];
        if (choice == LatentAssignment::kUnassigned) continue;
        stack.push_back(v.children[static_cast<std::size_t>(choice)]);
      }
    }
    return phi;
  }

  Vector weights(const AndOrTree& t) const {
    Vector w(layout.total_dim(), 0.0);
    for (std::size_t u = 0; u < t.nodes.size(); ++u)
      if (t.nodes[u].kind == NodeKind::terminal && owner[u] >= 0)
        std::copy(t.nodes[u].weight.begin(), t.nodes[u].weight.end(), w.begin() + static_cast<std::ptrdiff_t>(offset[u]));
    return w;
  }

  AndOrTree with_weights(AndOrTree t, const Vector& w) const {
    if (w.size() != layout.total_dim()) throw MisuseError("with_weights: weight dimension differs from layout");
    for (std::size_t u = 0; u < t.nodes.size(); ++u) {
      auto& v = t.nodes[u];
      if (v.kind != NodeKind::terminal || owner[u] < 0) continue;
      const auto b = w.begin() + static_cast<std::ptrdiff_t>(offset[u]);
      std::copy(b, b + static_cast<std::ptrdiff_t>(v.weight.size()), v.weight.begin());
    }
    return t;
  }

  FeatureOracle<FeatureGrid> oracle(const AndOrTree& t) const {
    return FeatureOracle<FeatureGrid>(
        spec, layout, [self = *this, t](const FeatureGrid& g, const LatentAssignment& z) { return self.features(t, g, z); });
  }
};

inline TreeLatentModel tree_latent_model(const AndOrTree& t) {
  check_tree(t);
  const std::size_t n = t.nodes.size();
  TreeLatentModel m;
  m.parent_node.assign(n, -1);
  for (std::size_t u = 0; u < n; ++u)
    for (int c : t.nodes[u].children) {
      if (m.parent_node[static_cast<std::size_t>(c)] != -1 || c == t.root)
        throw MisuseError("tree_latent_model: node " + std::to_string(c) + " has more than one parent");
      m.parent_node[static_cast<std::size_t>(c)] = static_cast<int>(u);
    }
  m.var_of_node.assign(n, -1);
  m.owner.assign(n, -1);
  m.offset.assign(n, 0);
  std::vector<int> quant;  // quantifier position per variable
  bool root_var = false;
  // pre-order: ancestors are declared before descendants
  std::vector<std::pair<int, int>> stack{{t.root, -1}};  // (node, nearest Or / Nor variable)
  std::vector<int> terminals;
  while (!stack.empty()) {
    const auto [u, above] = stack.back();
    stack.pop_back();
    const auto& v = t.nodes[static_cast<std::size_t>(u)];
    int here = above;
    if (v.kind == NodeKind::terminal) {
      if (above < 0) root_var = true;
      terminals.push_back(u);
      m.owner[static_cast<std::size_t>(u)] = above;
      continue;
    }
    if (v.kind != NodeKind::and_node) {
      const bool neg = v.kind == NodeKind::nor_node;
      int q = neg ? 1 : 0;
      if (above >= 0) {
        q = quant[static_cast<std::size_t>(above)];
        if ((q % 2 == 1) != neg) ++q;
      }
      here = m.spec.add(q / 2, neg ? Polarity::negative : Polarity::positive,
                        static_cast<int>(v.children.size()), above);
      quant.push_back(q);
      m.var_of_node[static_cast<std::size_t>(u)] = here;
      m.node_of_var.push_back(u);
    }
    for (auto it = v.children.rbegin(); it != v.children.rend(); ++it) stack.push_back({*it, here});
  }
  if (root_var) {
    // a one-state variable for terminals outside every Or / Nor
    const int id = m.spec.add(0, Polarity::positive, 1);
    m.node_of_var.push_back(-1);
    for (int u : terminals)
      if (m.owner[static_cast<std::size_t>(u)] < 0) m.owner[static_cast<std::size_t>(u)] = id;
  }
  std::vector<std::size_t> sizes(m.spec.size(), 0);
  for (int u : terminals) sizes[static_cast<std::size_t>(m.owner[static_cast<std::size_t>(u)])] += t.nodes[static_cast<std::size_t>(u)].weight.size();
  m.layout = BlockLayout::contiguous(sizes);
  std::vector<std::size_t> cursor(m.spec.size());
  for (std::size_t i = 0; i < cursor.size(); ++i) cursor[i] = m.layout.block_of(static_cast<int>(i)).offset;
  for (int u : terminals) {
    auto& c = cursor[static_cast<std::size_t>(m.owner[static_cast<std::size_t>(u)])];
    m.offset[static_cast<std::size_t>(u)] = c;
    c += t.nodes[static_cast<std::size_t>(u)].weight.size();
  }
  return m;
}

}  // namespace glvm
