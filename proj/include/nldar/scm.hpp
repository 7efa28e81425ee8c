#pragma once

// Boolean structural causal models with threshold noise: fitting, sampling,
// interventions, exact and Monte-Carlo ACE, and abduction-based counterfactuals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nldar/document.hpp"
#include "nldar/error.hpp"
#include "nldar/graph.hpp"
#include "nldar/workflow.hpp"

namespace nldar::scm {

using InterventionSet = std::map<std::string, bool>;
using Assignment = std::map<std::string, bool>;

struct FitOptions {
  double laplace_alpha = 1.0;
  bool smooth_roots = true;
};

struct WorldSample {
  std::vector<bool> values;  // in model node order
  std::vector<double> noise;
};

// Node v takes 1 iff u_v < p(v=1 | parents), u_v ~ U[0,1).
// CPT index: bit j set iff parents()[j] is true.
class BooleanScm {
 public:
  BooleanScm() = default;

  // Nodes are kept in topological order (ties by listing order). CPTs start at 0.5.
  BooleanScm(const std::vector<std::string>& ids, const std::vector<Edge>& edges) {
    std::map<std::string, std::size_t> at;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (!at.emplace(ids[i], i).second) throw InvalidWorkflow("duplicate SCM node " + ids[i]);
    graph::Adjacency children(ids.size());
    for (const auto& e : edges) {
      auto p = at.find(e.parent), c = at.find(e.child);
      if (p == at.end() || c == at.end()) throw NotFound("SCM edge references unknown node " + e.parent + "->" + e.child);
      children[p->second].push_back(c->second);
    }
    const auto order = graph::topological_order(children);
    if (!order) throw InvalidWorkflow("SCM graph has a cycle");
    for (auto i : *order) {
      index_[ids[i]] = ids_.size();
      ids_.push_back(ids[i]);
    }
    parents_.resize(ids_.size());
    for (const auto& e : edges) {
      auto& ps = parents_[index_.at(e.child)];
      const auto p = index_.at(e.parent);
      if (std::find(ps.begin(), ps.end(), p) == ps.end()) ps.push_back(p);
    }
    for (auto& ps : parents_) std::sort(ps.begin(), ps.end());
    for (const auto& ps : parents_) {
      if (ps.size() > 24) throw InvalidWorkflow("SCM node with more than 24 parents");
      cpt_.emplace_back(std::size_t{1} << ps.size(), 0.5);
    }
  }

  explicit BooleanScm(const Workflow& wf) : BooleanScm(step_ids(wf), wf.edges) {}

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  std::size_t index(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFound("unknown SCM node " + id);
    return it->second;
  }
  const std::vector<std::size_t>& parents(std::size_t i) const { return parents_[i]; }
  const std::vector<double>& cpt(std::size_t i) const { return cpt_[i]; }
  const std::vector<double>& cpt(const std::string& id) const { return cpt_[index(id)]; }

  void set_cpt(const std::string& id, std::vector<double> table) {
    const auto i = index(id);
    if (table.size() != cpt_[i].size())
      throw SchemaMismatch("CPT for " + id + " needs " + std::to_string(cpt_[i].size()) + " entries");
    for (double p : table)
      if (!(p >= 0.0 && p <= 1.0)) throw SchemaMismatch("CPT entry for " + id + " outside [0,1]");
    cpt_[i] = std::move(table);
  }

  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (std::size_t v = 0; v < size(); ++v)
      for (auto p : parents_[v]) out.push_back({ids_[p], ids_[v]});
    return out;
  }

  std::vector<std::size_t> roots() const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < size(); ++v)
      if (parents_[v].empty()) out.push_back(v);
    return out;
  }

  graph::Adjacency children() const {
    graph::Adjacency c(size());
    for (std::size_t v = 0; v < size(); ++v)
      for (auto p : parents_[v]) c[p].push_back(v);
    return c;
  }

  std::size_t parent_index(std::size_t v, const std::vector<bool>& world) const {
    std::size_t a = 0;
    for (std::size_t j = 0; j < parents_[v].size(); ++j)
      if (world[parents_[v][j]]) a |= std::size_t{1} << j;
    return a;
  }

  double p(std::size_t v, const std::vector<bool>& world) const { return cpt_[v][parent_index(v, world)]; }

  // Mutilated model: intervened nodes lose their parents and become constants.
  BooleanScm intervene(const InterventionSet& iv) const {
    BooleanScm m = *this;
    for (const auto& [id, value] : iv) {
      const auto v = index(id);
      m.parents_[v].clear();
      m.cpt_[v] = {value ? 1.0 : 0.0};
    }
    return m;
  }

  // Values of every node given a noise vector.
  std::vector<bool> evaluate(const std::vector<double>& noise) const {
    std::vector<bool> world(size(), false);
    for (std::size_t v = 0; v < size(); ++v) world[v] = noise[v] < p(v, world);
    return world;
  }

  FitOptions fit_options;
  std::size_t observations = 0;

  friend bool operator==(const BooleanScm& a, const BooleanScm& b) {
    return a.ids_ == b.ids_ && a.parents_ == b.parents_ && a.cpt_ == b.cpt_;
  }

 private:
  static std::vector<std::string> step_ids(const Workflow& wf) {
    std::vector<std::string> out;
    for (const auto& s : wf.steps) out.push_back(s.id);
    return out;
  }

  std::vector<std::string> ids_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<double>> cpt_;
};

// ---------------------------------------------------------------------------
// Fitting

// One row per execution; absent values are missing.
struct BooleanTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<bool>>> rows;

  std::size_t column(const std::string& id) const {
    auto it = std::find(columns.begin(), columns.end(), id);
    if (it == columns.end()) throw NotFound("no column " + id);
    return static_cast<std::size_t>(it - columns.begin());
  }
};

// Boolean view of executions over the nodes of a boolean workflow. Answers
// without a boolean field (whitelisted text steps) contribute a leading yes/no.
inline BooleanTable boolean_table(const Workflow& boolean_wf, const std::vector<ExecutionRecord>& executions,
                                  bool include_uncertain = true) {
  BooleanTable t;
  for (const auto& s : boolean_wf.steps) t.columns.push_back(s.id);
  for (const auto& rec : executions) {
    std::vector<std::optional<bool>> row(t.columns.size());
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      auto it = rec.answers.find(t.columns[c]);
      if (it == rec.answers.end()) continue;
      const auto& a = it->second;
      if (a.uncertain && !include_uncertain) continue;
      row[c] = a.boolean ? a.boolean : leading_yes_no(a.text);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// Smoothed conditional frequency tables. Parent assignments never observed
// fall back to the node's smoothed marginal.
inline BooleanScm fit(BooleanScm model, const BooleanTable& data, const FitOptions& opt = {}) {
  const double a = opt.laplace_alpha;
  std::vector<std::size_t> col(model.size());
  for (std::size_t v = 0; v < model.size(); ++v) col[v] = data.column(model.id(v));
  for (std::size_t v = 0; v < model.size(); ++v) {
    const auto& ps = model.parents(v);
    double ones = 0, seen = 0;
    std::vector<double> n1(model.cpt(v).size(), 0), n(model.cpt(v).size(), 0);
    for (const auto& row : data.rows) {
      const auto& x = row[col[v]];
      if (!x) continue;
      ++seen;
      ones += *x;
      std::size_t idx = 0;
      bool complete = true;
      for (std::size_t j = 0; j < ps.size() && complete; ++j) {
        const auto& pv = row[col[ps[j]]];
        if (!pv)
          complete = false;
        else if (*pv)
          idx |= std::size_t{1} << j;
      }
      if (!complete) continue;
      ++n[idx];
      n1[idx] += *x;
    }
    if (seen == 0) throw Error("node " + model.id(v) + " has no observations");
    const double marginal = (ones + a) / (seen + 2 * a);
    std::vector<double> table(n.size());
    if (ps.empty()) {
      table[0] = opt.smooth_roots ? marginal : ones / seen;
    } else {
      for (std::size_t i = 0; i < n.size(); ++i) table[i] = n[i] > 0 ? (n1[i] + a) / (n[i] + 2 * a) : marginal;
    }
    model.set_cpt(model.id(v), std::move(table));
  }
  model.fit_options = opt;
  model.observations = data.rows.size();
  return model;
}

// ---------------------------------------------------------------------------
// Sampling

// Uniform [0,1) from the top 53 bits; identical across standard libraries.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::vector<WorldSample> sample(const BooleanScm& m, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error("sample size must be positive");
  std::mt19937_64 rng(seed);
  std::vector<WorldSample> out(n);
  for (auto& s : out) {
    s.noise.resize(m.size());
    for (auto& u : s.noise) u = uniform01(rng);
    s.values = m.evaluate(s.noise);
  }
  return out;
}

inline BooleanTable to_table(const BooleanScm& m, const std::vector<WorldSample>& samples) {
  BooleanTable t{m.ids(), {}};
  for (const auto& s : samples) t.rows.emplace_back(s.values.begin(), s.values.end());
  return t;
}

// ---------------------------------------------------------------------------
// Exact inference by variable elimination

namespace detail {

struct Factor {
  std::vector<std::size_t> vars;  // ascending; bit i of an index is vars[i]
  std::vector<double> table;
};

inline Factor multiply(const Factor& a, const Factor& b) {
  Factor out;
  std::set_union(a.vars.begin(), a.vars.end(), b.vars.begin(), b.vars.end(), std::back_inserter(out.vars));
  auto positions = [&](const Factor& f) {
    std::vector<std::size_t> pos;
    for (auto v : f.vars) pos.push_back(static_cast<std::size_t>(
        std::lower_bound(out.vars.begin(), out.vars.end(), v) - out.vars.begin()));
    return pos;
  };
  const auto pa = positions(a), pb = positions(b);
  out.table.resize(std::size_t{1} << out.vars.size());
  for (std::size_t i = 0; i < out.table.size(); ++i) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t k = 0; k < pa.size(); ++k) ia |= ((i >> pa[k]) & 1U) << k;
    for (std::size_t k = 0; k < pb.size(); ++k) ib |= ((i >> pb[k]) & 1U) << k;
    out.table[i] = a.table[ia] * b.table[ib];
  }
  return out;
}

inline Factor sum_out(const Factor& f, std::size_t var) {
  const auto k = static_cast<std::size_t>(std::find(f.vars.begin(), f.vars.end(), var) - f.vars.begin());
  Factor out;
  for (auto v : f.vars)
    if (v != var) out.vars.push_back(v);
  out.table.assign(std::size_t{1} << out.vars.size(), 0.0);
  const std::size_t low = (std::size_t{1} << k) - 1;
  for (std::size_t i = 0; i < f.table.size(); ++i) out.table[(i & low) | ((i >> (k + 1)) << k)] += f.table[i];
  return out;
}

inline Factor node_factor(const BooleanScm& m, std::size_t v) {
  Factor f;
  f.vars = m.parents(v);
  f.vars.push_back(v);
  std::sort(f.vars.begin(), f.vars.end());
  f.table.resize(std::size_t{1} << f.vars.size());
  const auto& ps = m.parents(v);
  for (std::size_t i = 0; i < f.table.size(); ++i) {
    std::size_t pa = 0;
    bool value = false;
    for (std::size_t k = 0; k < f.vars.size(); ++k) {
      const bool bit = (i >> k) & 1U;
      if (f.vars[k] == v) {
        value = bit;
      } else if (bit) {
        const auto j = static_cast<std::size_t>(std::find(ps.begin(), ps.end(), f.vars[k]) - ps.begin());
        pa |= std::size_t{1} << j;
      }
    }
    const double p = m.cpt(v)[pa];
    f.table[i] = value ? p : 1.0 - p;
  }
  return f;
}

}  // namespace detail

// P(target = 1). Non-ancestors of the target are barren and pruned; the rest
// is eliminated greedily by smallest resulting factor.
inline double marginal(const BooleanScm& m, std::size_t target) {
  std::vector<bool> relevant(m.size(), false);
  std::vector<std::size_t> stack{target};
  relevant[target] = true;
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    for (auto p : m.parents(v))
      if (!relevant[p]) stack.push_back(p), relevant[p] = true;
  }
  std::vector<detail::Factor> factors;
  std::set<std::size_t> remaining;
  for (std::size_t v = 0; v < m.size(); ++v)
    if (relevant[v]) {
      factors.push_back(detail::node_factor(m, v));
      if (v != target) remaining.insert(v);
    }
  while (!remaining.empty()) {
    std::size_t best = 0, best_width = SIZE_MAX;
    for (auto v : remaining) {
      std::set<std::size_t> scope;
      for (const auto& f : factors)
        if (std::binary_search(f.vars.begin(), f.vars.end(), v)) scope.insert(f.vars.begin(), f.vars.end());
      if (scope.size() < best_width) best = v, best_width = scope.size();
    }
    std::optional<detail::Factor> product;
    std::vector<detail::Factor> rest;
    for (auto& f : factors) {
      if (std::binary_search(f.vars.begin(), f.vars.end(), best))
        product = product ? detail::multiply(*product, f) : std::move(f);
      else
        rest.push_back(std::move(f));
    }
    rest.push_back(detail::sum_out(*product, best));
    factors = std::move(rest);
    remaining.erase(best);
  }
  detail::Factor result{{}, {1.0}};
  for (const auto& f : factors) result = detail::multiply(result, f);
  // result is over {target}
  return result.table[1] / (result.table[0] + result.table[1]);
}

inline double marginal(const BooleanScm& m, const std::string& target) { return marginal(m, m.index(target)); }

// ---------------------------------------------------------------------------
// ACE

inline double ace_exact(const BooleanScm& m, const std::string& x, const std::string& y) {
  if (x == y) throw Error("ACE needs distinct cause and effect");
  const auto yi = m.index(y);
  m.index(x);
  return marginal(m.intervene({{x, true}}), yi) - marginal(m.intervene({{x, false}}), yi);
}

struct Estimate {
  double value = 0;
  double std_error = 0;  // of the mean
};

// Both interventions share each noise draw (common random numbers).
inline Estimate ace_monte_carlo(const BooleanScm& m, const std::string& x, const std::string& y, std::size_t n,
                                std::uint64_t seed) {
  if (x == y) throw Error("ACE needs distinct cause and effect");
  if (n < 2) throw Error("Monte-Carlo ACE needs at least 2 draws");
  const auto yi = m.index(y);
  const auto on = m.intervene({{x, true}}), off = m.intervene({{x, false}});
  std::mt19937_64 rng(seed);
  std::vector<double> noise(m.size());
  double sum = 0, sum_sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& u : noise) u = uniform01(rng);
    const double d = static_cast<double>(on.evaluate(noise)[yi]) - static_cast<double>(off.evaluate(noise)[yi]);
    sum += d;
    sum_sq += d * d;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = (sum_sq - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1);
  return {mean, std::sqrt(std::max(0.0, var) / static_cast<double>(n))};
}

struct AceRow {
  std::string step;
  std::string prompt;
  double ace = 0;
};

// ACE of every other node on `target`, sorted by effect (descending, then id).
inline std::vector<AceRow> ace_table(const BooleanScm& m, const std::string& target, const Workflow* wf = nullptr) {
  std::vector<AceRow> rows;
  std::optional<WorkflowIndex> idx;
  if (wf) idx.emplace(*wf);
  for (const auto& id : m.ids()) {
    if (id == target) continue;
    AceRow r{id, "", ace_exact(m, id, target)};
    if (idx && idx->contains(id)) r.prompt = idx->step(id).prompt;
    rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const AceRow& a, const AceRow& b) {
    return a.ace != b.ace ? a.ace > b.ace : a.step < b.step;
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Counterfactuals

inline constexpr double kClampEpsilon = 1e-9;

inline double clamp_p(double p) { return std::clamp(p, kClampEpsilon, 1.0 - kClampEpsilon); }

inline std::vector<bool> full_world(const BooleanScm& m, const Assignment& observed) {
  std::vector<bool> world(m.size());
  for (std::size_t v = 0; v < m.size(); ++v) {
    auto it = observed.find(m.id(v));
    if (it == observed.end()) throw Error("observation misses node " + m.id(v));
    world[v] = it->second;
  }
  for (const auto& [id, _] : observed) m.index(id);
  return world;
}

// Model whose forward marginals are the counterfactual distribution: each
// node's noise is confined to the interval consistent with the observation
// (abduction), intervened nodes are fixed (action), and thresholds are then
// re-read under the new parent values (prediction).
inline BooleanScm counterfactual_model(const BooleanScm& m, const Assignment& observed, const InterventionSet& iv) {
  const auto world = full_world(m, observed);
  BooleanScm out = m;
  for (std::size_t v = 0; v < m.size(); ++v) {
    const double raw = m.p(v, world);
    if ((world[v] && raw <= 0.0) || (!world[v] && raw >= 1.0))
      throw Inconsistent("observed " + m.id(v) + "=" + (world[v] ? "1" : "0") + " is impossible under its mechanism");
    const double pc = clamp_p(raw);
    std::vector<double> table(m.cpt(v).size());
    for (std::size_t a = 0; a < table.size(); ++a) {
      const double q = clamp_p(m.cpt(v)[a]);
      table[a] = world[v] ? std::min(pc, q) / pc : std::max(0.0, q - pc) / (1.0 - pc);
    }
    out.set_cpt(m.id(v), std::move(table));
  }
  return out.intervene(iv);
}

inline double counterfactual(const BooleanScm& m, const Assignment& observed, const InterventionSet& iv,
                             const std::string& target) {
  return marginal(counterfactual_model(m, observed, iv), m.index(target));
}

struct SearchEntry {
  InterventionSet intervention;
  double probability = 0;   // P(target = 1)
  std::size_t changed = 0;  // nodes set to a value different from the observation
};

struct SearchResult {
  std::vector<SearchEntry> entries;  // by probability, descending
  bool factual_target = false;
  std::vector<SearchEntry> minimal_flips;  // fewest changed nodes among flipping entries
};

inline constexpr std::size_t kDefaultSearchBound = 12;

// Every assignment over `candidates`. An entry flips the target when the
// probability of the opposite of its observed value exceeds `threshold`.
inline SearchResult counterfactual_search(const BooleanScm& m, const Assignment& observed,
                                          const std::vector<std::string>& candidates, const std::string& target,
                                          double threshold = 0.5, std::size_t bound = kDefaultSearchBound) {
  if (candidates.size() > bound)
    throw Error("counterfactual search over " + std::to_string(candidates.size()) + " nodes exceeds bound " +
                std::to_string(bound));
  std::set<std::string> unique(candidates.begin(), candidates.end());
  if (unique.size() != candidates.size()) throw Error("duplicate candidate node");
  for (const auto& c : candidates) m.index(c);
  const auto ti = m.index(target);
  const auto world = full_world(m, observed);
  SearchResult r;
  r.factual_target = world[ti];
  for (std::size_t bits = 0; bits < (std::size_t{1} << candidates.size()); ++bits) {
    SearchEntry e;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      const bool value = (bits >> k) & 1U;
      e.intervention[candidates[k]] = value;
      e.changed += value != observed.at(candidates[k]);
    }
    e.probability = marginal(counterfactual_model(m, observed, e.intervention), ti);
    r.entries.push_back(std::move(e));
  }
  std::stable_sort(r.entries.begin(), r.entries.end(),
                   [](const SearchEntry& a, const SearchEntry& b) { return a.probability > b.probability; });
  std::optional<std::size_t> fewest;
  for (const auto& e : r.entries) {
    const double flip = r.factual_target ? 1.0 - e.probability : e.probability;
    if (flip > threshold && (!fewest || e.changed < *fewest)) fewest = e.changed;
  }
  if (fewest)
    for (const auto& e : r.entries) {
      const double flip = r.factual_target ? 1.0 - e.probability : e.probability;
      if (flip > threshold && e.changed == *fewest) r.minimal_flips.push_back(e);
    }
  return r;
}

// Non-canonical completion of a partial observation: missing nodes take the
// majority value of their column (ties and empty columns become false).
inline Assignment majority_fill(const BooleanScm& m, const std::map<std::string, std::optional<bool>>& partial,
                                const BooleanTable& data) {
  Assignment out;
  for (const auto& id : m.ids()) {
    auto it = partial.find(id);
    if (it != partial.end() && it->second) {
      out[id] = *it->second;
      continue;
    }
    const auto c = data.column(id);
    std::size_t yes = 0, no = 0;
    for (const auto& row : data.rows)
      if (row[c]) (*row[c] ? yes : no)++;
    out[id] = yes > no;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kScmFormatVersion = 1;

inline nlohmann::json to_json(const BooleanScm& m) {
  nlohmann::json nodes = nlohmann::json::array(), marginals = nlohmann::json::object();
  for (std::size_t v = 0; v < m.size(); ++v) {
    nlohmann::json ps = nlohmann::json::array();
    for (auto p : m.parents(v)) ps.push_back(m.id(p));
    nodes.push_back({{"id", m.id(v)}, {"parents", ps}, {"cpt", m.cpt(v)}});
    if (m.parents(v).empty()) marginals[m.id(v)] = m.cpt(v)[0];
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : m.edges()) edges.push_back({e.parent, e.child});
  return {{"format", "nldar-scm"},
          {"version", kScmFormatVersion},
          {"nodes", nodes},
          {"edges", edges},
          {"marginals", marginals},
          {"smoothing", {{"laplace_alpha", m.fit_options.laplace_alpha}, {"smooth_roots", m.fit_options.smooth_roots}}},
          {"observations", m.observations}};
}

inline BooleanScm scm_from_json(const nlohmann::json& j) {
  try {
    if (j.value("version", kScmFormatVersion) > kScmFormatVersion) throw ParseError("SCM format version is newer than supported");
    std::vector<std::string> ids;
    std::vector<Edge> edges;
    for (const auto& n : j.at("nodes")) {
      ids.push_back(n.at("id").get<std::string>());
      for (const auto& p : n.at("parents")) edges.push_back({p.get<std::string>(), ids.back()});
    }
    BooleanScm m(ids, edges);
    // Stored CPTs are indexed by the stored parent order; re-map to ours.
    for (const auto& n : j.at("nodes")) {
      const auto id = n.at("id").get<std::string>();
      const auto v = m.index(id);
      std::vector<std::string> stored = n.at("parents").get<std::vector<std::string>>();
      const auto table = n.at("cpt").get<std::vector<double>>();
      if (table.size() != m.cpt(v).size()) throw ParseError("CPT size mismatch for " + id);
      std::vector<double> ours(table.size());
      for (std::size_t a = 0; a < table.size(); ++a) {
        std::size_t mine = 0;
        for (std::size_t k = 0; k < stored.size(); ++k)
          if ((a >> k) & 1U) {
            const auto& ps = m.parents(v);
            const auto pos = std::find(ps.begin(), ps.end(), m.index(stored[k])) - ps.begin();
            mine |= std::size_t{1} << pos;
          }
        ours[mine] = table[a];
      }
      m.set_cpt(id, std::move(ours));
    }
    if (j.contains("smoothing")) {
      m.fit_options.laplace_alpha = j.at("smoothing").value("laplace_alpha", 1.0);
      m.fit_options.smooth_roots = j.at("smoothing").value("smooth_roots", true);
    }
    m.observations = j.value("observations", std::size_t{0});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed SCM: ") + e.what());
  }
}

}  // namespace nldar::scm
