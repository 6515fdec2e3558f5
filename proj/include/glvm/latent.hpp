#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glvm/errors.hpp"
#include "glvm/linalg.hpp"

namespace glvm {

enum class Polarity { positive, negative };

inline const char* to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

struct LatentVariable {
  int id = 0;
  int stage = 0;
  Polarity polarity = Polarity::positive;
  int domain = 1;
  int parent = -1;

  /// Position of the quantifier in max z1+ min z1- max z2+ min z2- ...
  int quantifier() const { return 2 * stage + (polarity == Polarity::negative ? 1 : 0); }
  bool maximizes() const { return polarity == Polarity::positive; }
};

/// Alternating hierarchy of finite-domain latent variables.
///
/// Variables are numbered in insertion order. A parent must be inserted before
/// its child and must not be quantified after it; together these keep the
/// dependency edges a forest and make the (quantifier, id) order a
/// topological order of that forest.
class LatentSpec {
 public:
  int add(int stage, Polarity polarity, int domain, int parent = -1) {
    if (stage < 0) throw MisuseError("LatentSpec: negative stage");
    if (domain < 1) throw MisuseError("LatentSpec: domain size must be >= 1");
    LatentVariable v{static_cast<int>(vars_.size()), stage, polarity, domain, parent};
    if (parent >= 0) {
      if (parent >= v.id) throw MisuseError("LatentSpec: parent must be declared before its child");
      if (vars_[parent].quantifier() > v.quantifier())
        throw MisuseError("LatentSpec: parent of variable " + std::to_string(v.id) +
                          " is quantified after it");
    } else if (parent != -1) {
      throw MisuseError("LatentSpec: invalid parent id");
    }
    vars_.push_back(v);
    return v.id;
  }
  int add_positive(int stage, int domain, int parent = -1) {
    return add(stage, Polarity::positive, domain, parent);
  }
  int add_negative(int stage, int domain, int parent = -1) {
    return add(stage, Polarity::negative, domain, parent);
  }

  std::size_t size() const { return vars_.size(); }
  bool empty() const { return vars_.empty(); }
  const LatentVariable& variable(int id) const { return vars_.at(static_cast<std::size_t>(id)); }
  const std::vector<LatentVariable>& variables() const { return vars_; }

  int num_stages() const {
    int k = 0;
    for (const auto& v : vars_) k = std::max(k, v.stage + 1);
    return k;
  }

  bool has(Polarity p) const {
    return std::any_of(vars_.begin(), vars_.end(), [p](const auto& v) { return v.polarity == p; });
  }

  std::vector<int> of(Polarity p) const {
    std::vector<int> ids;
    for (const auto& v : vars_)
      if (v.polarity == p) ids.push_back(v.id);
    return ids;
  }

  /// Variable ids sorted by (quantifier position, id).
  std::vector<int> order() const {
    std::vector<int> ids(vars_.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [this](int a, int b) {
      return vars_[a].quantifier() < vars_[b].quantifier();
    });
    return ids;
  }

  std::vector<std::vector<int>> children() const {
    std::vector<std::vector<int>> ch(vars_.size());
    for (const auto& v : vars_)
      if (v.parent >= 0) ch[v.parent].push_back(v.id);
    return ch;
  }

  /// Product of domain sizes over the given variables (double: may be huge).
  double assignment_count(std::span<const int> ids) const {
    double n = 1.0;
    for (int id : ids) n *= variable(id).domain;
    return n;
  }
  double assignment_count() const {
    double n = 1.0;
    for (const auto& v : vars_) n *= v.domain;
    return n;
  }

  bool operator==(const LatentSpec& o) const {
    if (vars_.size() != o.vars_.size()) return false;
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      const auto &a = vars_[i], &b = o.vars_[i];
      if (a.stage != b.stage || a.polarity != b.polarity || a.domain != b.domain || a.parent != b.parent)
        return false;
    }
    return true;
  }

 private:
  std::vector<LatentVariable> vars_;
};

/// One choice per latent variable; kUnassigned marks an omitted variable
/// whose feature block is zero-filled.
struct LatentAssignment {
  static constexpr int kUnassigned = -1;

  std::vector<int> choices;

  LatentAssignment() = default;
  explicit LatentAssignment(std::size_t n, int fill = kUnassigned) : choices(n, fill) {}
  explicit LatentAssignment(std::vector<int> c) : choices(std::move(c)) {}

  std::size_t size() const { return choices.size(); }
  int operator[](int id) const { return choices[static_cast<std::size_t>(id)]; }
  int& operator[](int id) { return choices[static_cast<std::size_t>(id)]; }
  bool assigned(int id) const { return choices[static_cast<std::size_t>(id)] != kUnassigned; }

  bool operator==(const LatentAssignment&) const = default;
  auto operator<=>(const LatentAssignment&) const = default;

  void check_against(const LatentSpec& spec, bool require_complete) const {
    if (choices.size() != spec.size()) throw MisuseError("LatentAssignment: size differs from spec");
    for (const auto& v : spec.variables()) {
      int c = choices[static_cast<std::size_t>(v.id)];
      if (c == kUnassigned) {
        if (require_complete) throw MisuseError("LatentAssignment: variable " + std::to_string(v.id) + " unassigned");
        continue;
      }
      if (c < 0 || c >= v.domain) throw MisuseError("LatentAssignment: choice out of domain");
    }
  }
};

/// Advance the variables `ids` (last one fastest) through their domains.
/// Returns false after the last combination, leaving all of them at 0.
inline bool next_assignment(LatentAssignment& z, std::span<const int> ids, const LatentSpec& spec) {
  for (std::size_t k = ids.size(); k-- > 0;) {
    int id = ids[k];
    if (++z[id] < spec.variable(id).domain) return true;
    z[id] = 0;
  }
  return false;
}

struct Block {
  int var = 0;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool operator==(const Block&) const = default;
};

/// Disjoint index ranges, one per latent variable, covering [0, total_dim).
class BlockLayout {
 public:
  BlockLayout() = default;

  explicit BlockLayout(std::vector<Block> blocks) : blocks_(std::move(blocks)) {
    std::vector<const Block*> sorted;
    for (const auto& b : blocks_) sorted.push_back(&b);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) {
      return a->offset != b->offset ? a->offset < b->offset : a->size < b->size;
    });
    std::size_t cursor = 0;
    for (const Block* b : sorted) {
      if (b->offset != cursor) throw MisuseError("BlockLayout: blocks overlap or leave a gap");
      cursor += b->size;
    }
    total_ = cursor;
    for (const auto& b : blocks_) {
      if (b.var < 0) throw MisuseError("BlockLayout: negative variable id");
      if (static_cast<std::size_t>(b.var) >= by_var_.size()) by_var_.resize(b.var + 1, -1);
      if (by_var_[b.var] != -1) throw MisuseError("BlockLayout: variable owns two blocks");
      by_var_[b.var] = static_cast<int>(&b - blocks_.data());
    }
  }

  /// Variable i owns the i-th range, laid out back to back.
  static BlockLayout contiguous(std::span<const std::size_t> sizes) {
    std::vector<Block> blocks;
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      blocks.push_back({static_cast<int>(i), off, sizes[i]});
      off += sizes[i];
    }
    return BlockLayout(std::move(blocks));
  }

  std::size_t total_dim() const { return total_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& block_of(int var) const {
    if (var < 0 || static_cast<std::size_t>(var) >= by_var_.size() || by_var_[var] < 0)
      throw MisuseError("BlockLayout: no block for variable " + std::to_string(var));
    return blocks_[static_cast<std::size_t>(by_var_[var])];
  }

  void check_covers(const LatentSpec& spec) const {
    if (blocks_.size() != spec.size()) throw MisuseError("BlockLayout: block count differs from variable count");
    for (const auto& v : spec.variables()) (void)block_of(v.id);
  }

  bool operator==(const BlockLayout& o) const { return total_ == o.total_ && blocks_ == o.blocks_; }

 private:
  std::vector<Block> blocks_;
  std::vector<int> by_var_;
  std::size_t total_ = 0;
};

/// True when every block of an unassigned variable is exactly zero.
inline bool zero_filled(const BlockLayout& layout, std::span<const double> phi, const LatentAssignment& z) {
  for (const auto& b : layout.blocks()) {
    if (z.assigned(b.var)) continue;
    for (std::size_t i = 0; i < b.size; ++i)
      if (phi[b.offset + i] != 0.0) return false;
  }
  return true;
}

struct Model {
  Vector w;
  BlockLayout layout;

  Model() = default;
  explicit Model(BlockLayout l) : w(l.total_dim(), 0.0), layout(std::move(l)) {}
  Model(Vector weights, BlockLayout l) : w(std::move(weights)), layout(std::move(l)) {
    if (w.size() != layout.total_dim()) throw MisuseError("Model: weight dimension differs from layout");
  }
};

/// Feature function phi(x, z) with its declared spec and layout.
///
/// When `factorized` is set the oracle promises that the block of variable v
/// depends only on (z_v, z_parent(v)); structured inference relies on that.
template <class Payload>
class FeatureOracle {
 public:
  using Fn = std::function<Vector(const Payload&, const LatentAssignment&)>;

  FeatureOracle(LatentSpec spec, BlockLayout layout, Fn fn, bool factorized = false)
      : spec_(std::move(spec)), layout_(std::move(layout)), fn_(std::move(fn)), factorized_(factorized) {
    layout_.check_covers(spec_);
    if (!fn_) throw MisuseError("FeatureOracle: empty feature function");
  }

  Vector operator()(const Payload& x, const LatentAssignment& z) const {
    Vector phi = fn_(x, z);
    if (phi.size() != layout_.total_dim()) throw MisuseError("FeatureOracle: feature vector has wrong length");
    return phi;
  }

  const LatentSpec& spec() const { return spec_; }
  const BlockLayout& layout() const { return layout_; }
  bool factorized() const { return factorized_; }

 private:
  LatentSpec spec_;
  BlockLayout layout_;
  Fn fn_;
  bool factorized_;
};

template <class Payload>
struct Example {
  std::string id;
  Payload payload;
  int label = 1;
};

template <class Payload>
using Dataset = std::vector<Example<Payload>>;

inline void check_label(int y) {
  if (y != 1 && y != -1) throw MisuseError("label must be +1 or -1");
}

}  // namespace glvm
