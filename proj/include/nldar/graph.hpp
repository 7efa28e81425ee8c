#pragma once

// Index-based DAG utilities shared by the workflow model and the SCM.
// Nodes are 0..n-1; adjacency lists hold children.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <vector>

namespace nldar::graph {

using Adjacency = std::vector<std::vector<std::size_t>>;

// Square bit matrix, row-major, 64 bits per word.
class BitMatrix {
 public:
  BitMatrix() = default;
  explicit BitMatrix(std::size_t n) : n_(n), words_((n + 63) / 64), bits_(n * words_, 0) {}

  std::size_t size() const { return n_; }

  bool test(std::size_t r, std::size_t c) const {
    return (bits_[r * words_ + c / 64] >> (c % 64)) & 1U;
  }
  void set(std::size_t r, std::size_t c) { bits_[r * words_ + c / 64] |= std::uint64_t{1} << (c % 64); }

  // row(dst) |= row(src)
  void merge_row(std::size_t dst, std::size_t src) {
    for (std::size_t w = 0; w < words_; ++w) bits_[dst * words_ + w] |= bits_[src * words_ + w];
  }

  friend bool operator==(const BitMatrix&, const BitMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> bits_;
};

inline Adjacency reverse(const Adjacency& children) {
  Adjacency parents(children.size());
  for (std::size_t u = 0; u < children.size(); ++u)
    for (auto v : children[u]) parents[v].push_back(u);
  return parents;
}

// Kahn's algorithm. Among ready nodes the one with the smallest rank is
// emitted first (rank defaults to the node index). Returns nullopt on a cycle.
inline std::optional<std::vector<std::size_t>> topological_order(
    const Adjacency& children, const std::vector<std::size_t>* rank = nullptr) {
  const auto n = children.size();
  std::vector<std::size_t> indeg(n, 0);
  for (const auto& cs : children)
    for (auto v : cs) ++indeg[v];
  auto key = [&](std::size_t v) { return rank ? (*rank)[v] : v; };
  auto later = [&](std::size_t a, std::size_t b) {
    return key(a) != key(b) ? key(a) > key(b) : a > b;
  };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(later)> ready(later);
  for (std::size_t v = 0; v < n; ++v)
    if (indeg[v] == 0) ready.push(v);
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    const auto u = ready.top();
    ready.pop();
    order.push_back(u);
    for (auto v : children[u])
      if (--indeg[v] == 0) ready.push(v);
  }
  if (order.size() != n) return std::nullopt;
  return order;
}

// Nodes that lie on at least one directed cycle (Tarjan SCC, size > 1 or self loop).
inline std::vector<std::size_t> cyclic_nodes(const Adjacency& children) {
  const auto n = children.size();
  std::vector<int> index(n, -1), low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack, out;
  int counter = 0;
  std::function<void(std::size_t)> strong = [&](std::size_t v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    for (auto w : children[v]) {
      if (index[w] < 0) {
        strong(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::size_t> comp;
      std::size_t w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        comp.push_back(w);
      } while (w != v);
      const bool self_loop =
          std::find(children[v].begin(), children[v].end(), v) != children[v].end();
      if (comp.size() > 1 || self_loop) out.insert(out.end(), comp.begin(), comp.end());
    }
  };
  for (std::size_t v = 0; v < n; ++v)
    if (index[v] < 0) strong(v);
  std::sort(out.begin(), out.end());
  return out;
}

// reach.test(u, v) iff there is a path of length >= 1 from u to v. Requires a DAG.
inline BitMatrix reachability(const Adjacency& children) {
  const auto order = topological_order(children);
  BitMatrix reach(children.size());
  if (!order) return reach;
  for (auto it = order->rbegin(); it != order->rend(); ++it) {
    const auto u = *it;
    for (auto v : children[u]) {
      reach.set(u, v);
      reach.merge_row(u, v);
    }
  }
  return reach;
}

// Unique minimal edge set with the same reachability (DAG only).
inline Adjacency transitive_reduction(const Adjacency& children) {
  const auto reach = reachability(children);
  Adjacency out(children.size());
  for (std::size_t u = 0; u < children.size(); ++u) {
    for (auto v : children[u]) {
      if (std::find(out[u].begin(), out[u].end(), v) != out[u].end()) continue;
      const bool redundant = std::any_of(children[u].begin(), children[u].end(), [&](std::size_t w) {
        return w != v && reach.test(w, v);
      });
      if (!redundant) out[u].push_back(v);
    }
    std::sort(out[u].begin(), out[u].end());
  }
  return out;
}

// Length of the longest path from any root to each node (roots have depth 0).
inline std::vector<std::size_t> longest_path_depth(const Adjacency& children) {
  std::vector<std::size_t> depth(children.size(), 0);
  const auto order = topological_order(children);
  if (!order) return depth;
  for (auto u : *order)
    for (auto v : children[u]) depth[v] = std::max(depth[v], depth[u] + 1);
  return depth;
}

// Nodes reachable from `from` (excluding it unless on a cycle).
inline std::vector<std::size_t> descendants(const Adjacency& children, std::size_t from) {
  std::vector<bool> seen(children.size(), false);
  std::vector<std::size_t> stack(children[from].begin(), children[from].end()), out;
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    if (seen[u]) continue;
    seen[u] = true;
    out.push_back(u);
    for (auto v : children[u]) stack.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace nldar::graph
