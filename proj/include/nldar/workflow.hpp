#pragma once

// Workflow graphs for natural-language diagnostic reasoning: typed steps,
// parent/child edges, the input / component / verdict partition, and the
// graph operations built on them (validation, linearization, layering,
// statistics, ancestry-preserving condensation).

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "nldar/error.hpp"
#include "nldar/graph.hpp"
#include "nldar/rational.hpp"

namespace nldar {

enum class StepKind { read, extract, infer, infer_knowledge };
enum class AnswerSchema { free_text, boolean_with_text, text_with_highlights };

NLOHMANN_JSON_SERIALIZE_ENUM(StepKind, {{StepKind::read, "read"},
                                        {StepKind::extract, "extract"},
                                        {StepKind::infer, "infer"},
                                        {StepKind::infer_knowledge, "infer_knowledge"}})
NLOHMANN_JSON_SERIALIZE_ENUM(AnswerSchema, {{AnswerSchema::free_text, "free_text"},
                                            {AnswerSchema::boolean_with_text, "boolean_with_text"},
                                            {AnswerSchema::text_with_highlights, "text_with_highlights"}})

inline bool is_infer(StepKind k) { return k == StepKind::infer || k == StepKind::infer_knowledge; }

inline std::string to_string(StepKind k) { return nlohmann::json(k).get<std::string>(); }
inline std::string to_string(AnswerSchema s) { return nlohmann::json(s).get<std::string>(); }

struct Step {
  std::string id;
  std::string name;
  StepKind kind = StepKind::infer;
  std::string prompt;
  std::string description;
  std::string example;
  AnswerSchema schema = AnswerSchema::free_text;
  // Read steps: document section consumed ("*" = whole document).
  std::string section;
  // Step relies on figure/table content.
  bool uses_figures = false;
};

struct Edge {
  std::string parent;
  std::string child;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// How the workflow reduces to its boolean decision graph.
struct BooleanView {
  std::vector<std::string> whitelist;
  std::string confounder;
  std::vector<std::string> confounder_exempt;
};

struct Workflow {
  std::string id;
  std::string title;
  std::vector<Step> steps;
  std::vector<Edge> edges;
  std::vector<std::string> inputs;
  std::vector<std::string> verdicts;
  std::vector<std::string> components;
  std::vector<std::string> preferred_order;
  BooleanView boolean_view;
};

// Id <-> index mapping plus adjacency. Edges with unknown endpoints are dropped
// here; validate() reports them.
class WorkflowIndex {
 public:
  explicit WorkflowIndex(const Workflow& wf) : wf_(&wf) {
    for (std::size_t i = 0; i < wf.steps.size(); ++i) index_.emplace(wf.steps[i].id, i);
    children_.resize(wf.steps.size());
    for (const auto& e : wf.edges) {
      auto p = index_.find(e.parent), c = index_.find(e.child);
      if (p == index_.end() || c == index_.end()) continue;
      auto& cs = children_[p->second];
      if (std::find(cs.begin(), cs.end(), c->second) == cs.end()) cs.push_back(c->second);
    }
    for (auto& cs : children_) std::sort(cs.begin(), cs.end());
    parents_ = graph::reverse(children_);
  }

  std::size_t size() const { return wf_->steps.size(); }
  bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }

  std::size_t at(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw NotFound("unknown step id: " + std::string(id));
    return it->second;
  }
  const Step& step(std::size_t i) const { return wf_->steps[i]; }
  const Step& step(std::string_view id) const { return wf_->steps[at(id)]; }
  const std::string& id(std::size_t i) const { return wf_->steps[i].id; }

  const graph::Adjacency& children() const { return children_; }
  const graph::Adjacency& parents() const { return parents_; }

  std::vector<std::string> parent_ids(std::string_view id) const { return ids(parents_[at(id)]); }
  std::vector<std::string> child_ids(std::string_view id) const { return ids(children_[at(id)]); }

  std::vector<std::string> ids(const std::vector<std::size_t>& idx) const {
    std::vector<std::string> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(id(i));
    return out;
  }

 private:
  const Workflow* wf_;
  std::unordered_map<std::string, std::size_t> index_;
  graph::Adjacency children_;
  graph::Adjacency parents_;
};

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string code;
  std::string message;
  std::vector<std::string> ids;
};

using ValidationReport = std::vector<Violation>;

namespace detail {

inline void add(ValidationReport& r, std::string code, std::string msg, std::vector<std::string> ids = {}) {
  r.push_back({std::move(code), std::move(msg), std::move(ids)});
}

// Graph-level problems only: ids, endpoints, cycles.
inline ValidationReport structural_violations(const Workflow& wf) {
  ValidationReport r;
  std::set<std::string> seen;
  for (const auto& s : wf.steps) {
    if (!seen.insert(s.id).second) add(r, "duplicate_step", "duplicate step id", {s.id});
    if (s.id.empty()) add(r, "empty_id", "step id is empty");
  }
  for (const auto& e : wf.edges) {
    if (!seen.count(e.parent) || !seen.count(e.child))
      add(r, "unknown_edge_endpoint", "edge references an unknown step", {e.parent, e.child});
  }
  WorkflowIndex idx(wf);
  auto cyc = graph::cyclic_nodes(idx.children());
  if (!cyc.empty()) add(r, "cycle", "cycle", idx.ids(cyc));
  return r;
}

}  // namespace detail

// Enumerates every violated well-formedness clause; empty means valid.
inline ValidationReport validate(const Workflow& wf) {
  using detail::add;
  ValidationReport r = detail::structural_violations(wf);
  WorkflowIndex idx(wf);

  for (const auto& s : wf.steps) {
    if (s.name.empty()) add(r, "empty_name", "step name is empty", {s.id});
    if (s.prompt.empty()) add(r, "empty_prompt", "step prompt is empty", {s.id});
    if (s.schema == AnswerSchema::boolean_with_text && !is_infer(s.kind))
      add(r, "schema_kind", "boolean answers are only legal on infer steps", {s.id});
    if (s.schema == AnswerSchema::text_with_highlights && s.kind != StepKind::extract)
      add(r, "schema_kind", "highlight answers are only legal on extract steps", {s.id});
  }

  auto as_set = [&](const std::vector<std::string>& v, const char* name) {
    std::set<std::string> out;
    for (const auto& id : v) {
      if (!idx.contains(id)) add(r, "unknown_member", std::string(name) + " references an unknown step", {id});
      out.insert(id);
    }
    if (out.empty()) add(r, "empty_set", std::string(name) + " is empty");
    return out;
  };
  const auto inputs = as_set(wf.inputs, "inputs");
  const auto verdicts = as_set(wf.verdicts, "verdicts");
  const auto components = as_set(wf.components, "components");

  auto overlap = [&](const std::set<std::string>& a, const std::set<std::string>& b, const char* what) {
    std::vector<std::string> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    if (!both.empty()) add(r, "set_overlap", std::string(what) + " overlap", both);
  };
  overlap(inputs, components, "inputs and components");
  overlap(inputs, verdicts, "inputs and verdicts");
  overlap(components, verdicts, "components and verdicts");

  std::vector<std::string> uncovered;
  for (const auto& s : wf.steps)
    if (!inputs.count(s.id) && !verdicts.count(s.id) && !components.count(s.id)) uncovered.push_back(s.id);
  if (!uncovered.empty()) add(r, "set_coverage", "steps outside inputs, components and verdicts", uncovered);

  for (const auto& id : inputs) {
    if (!idx.contains(id)) continue;
    const auto i = idx.at(id);
    if (!idx.parents()[i].empty()) add(r, "input_not_root", "input has parents", {id});
    const bool feeds = std::any_of(idx.children()[i].begin(), idx.children()[i].end(),
                                   [&](std::size_t c) { return components.count(idx.id(c)) > 0; });
    if (!feeds) add(r, "input_feeds_no_component", "input feeds no component", {id});
  }
  for (const auto& id : verdicts) {
    if (!idx.contains(id)) continue;
    if (!idx.children()[idx.at(id)].empty()) add(r, "verdict_not_sink", "verdict has children", {id});
  }
  for (const auto& id : wf.preferred_order)
    if (!idx.contains(id)) add(r, "unknown_member", "preferred_order references an unknown step", {id});
  return r;
}

inline std::string describe(const ValidationReport& r) {
  std::ostringstream os;
  for (const auto& v : r) {
    os << v.code << ": " << v.message;
    for (std::size_t i = 0; i < v.ids.size(); ++i) os << (i ? ", " : " [") << v.ids[i];
    if (!v.ids.empty()) os << "]";
    os << "\n";
  }
  return os.str();
}

namespace detail {
inline void require_structure(const Workflow& wf) {
  auto r = structural_violations(wf);
  if (!r.empty()) throw InvalidWorkflow("workflow graph is malformed:\n" + describe(r));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Ordering

// Topological order; among ready steps the earliest in preferred_order wins,
// then the lexicographically smallest id.
inline std::vector<std::string> linearize(const Workflow& wf) {
  detail::require_structure(wf);
  WorkflowIndex idx(wf);
  const auto n = idx.size();
  // Rank: preferred position first, then lexicographic id for the rest.
  std::vector<std::size_t> by_id(n);
  for (std::size_t i = 0; i < n; ++i) by_id[i] = i;
  std::sort(by_id.begin(), by_id.end(), [&](auto a, auto b) { return idx.id(a) < idx.id(b); });
  std::vector<std::size_t> rank(n, 0);
  std::vector<bool> ranked(n, false);
  std::size_t next = 0;
  for (const auto& id : wf.preferred_order) {
    const auto i = idx.at(id);
    if (!ranked[i]) {
      rank[i] = next++;
      ranked[i] = true;
    }
  }
  for (auto i : by_id)
    if (!ranked[i]) rank[i] = next++;
  auto order = graph::topological_order(idx.children(), &rank);
  return idx.ids(*order);
}

// Antichains by longest-path depth from the roots.
inline std::vector<std::vector<std::string>> layers(const Workflow& wf) {
  detail::require_structure(wf);
  WorkflowIndex idx(wf);
  const auto depth = graph::longest_path_depth(idx.children());
  const std::size_t count = idx.size() == 0 ? 0 : *std::max_element(depth.begin(), depth.end()) + 1;
  std::vector<std::vector<std::string>> out(count);
  for (std::size_t i = 0; i < idx.size(); ++i) out[depth[i]].push_back(idx.id(i));
  for (auto& layer : out) std::sort(layer.begin(), layer.end());
  return out;
}

struct GraphStats {
  Rational avg_degree;    // 2|E| / |V|
  Rational mean_parents;  // |E| / |V|
  std::size_t root_count = 0;
  std::size_t terminal_count = 0;
  std::size_t layer_count = 0;
};

inline GraphStats stats(const Workflow& wf) {
  detail::require_structure(wf);
  WorkflowIndex idx(wf);
  GraphStats s;
  const auto n = static_cast<std::int64_t>(idx.size());
  if (n == 0) return s;
  std::int64_t edges = 0;
  for (const auto& cs : idx.children()) edges += static_cast<std::int64_t>(cs.size());
  s.avg_degree = Rational(2 * edges, n);
  s.mean_parents = Rational(edges, n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx.parents()[i].empty()) ++s.root_count;
    if (idx.children()[i].empty()) ++s.terminal_count;
  }
  s.layer_count = layers(wf).size();
  return s;
}

// ---------------------------------------------------------------------------
// Condensation

struct CondenseOptions {
  // Require every kept step to be boolean_with_text or whitelisted.
  bool boolean_only = false;
  std::set<std::string> whitelist;
};

// Restricts the workflow to `keep`, connecting u -> v whenever v is reachable
// from u through dropped steps only, then transitively reduces. Extra edges
// are appended after reduction. Inputs become the roots, verdicts the kept
// original verdicts (or the sinks if none survive), components the rest.
inline Workflow condense(const Workflow& wf, const std::set<std::string>& keep,
                         const std::vector<Edge>& extra_edges = {}, const CondenseOptions& opt = {}) {
  detail::require_structure(wf);
  if (keep.empty()) throw InvalidWorkflow("condense: keep set is empty");
  WorkflowIndex idx(wf);
  std::vector<bool> kept(idx.size(), false);
  for (const auto& id : keep) {
    const auto i = idx.at(id);
    kept[i] = true;
    if (opt.boolean_only && idx.step(i).schema != AnswerSchema::boolean_with_text && !opt.whitelist.count(id))
      throw InvalidWorkflow("condense: step " + id + " is neither boolean nor whitelisted");
  }

  Workflow out;
  out.id = wf.id.empty() ? std::string{} : wf.id + "-condensed";
  out.title = wf.title;
  out.boolean_view = wf.boolean_view;
  std::vector<std::size_t> new_index(idx.size(), 0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (!kept[i]) continue;
    new_index[i] = out.steps.size();
    out.steps.push_back(idx.step(i));
  }
  for (const auto& id : wf.preferred_order)
    if (keep.count(id)) out.preferred_order.push_back(id);

  graph::Adjacency contracted(out.steps.size());
  for (std::size_t u = 0; u < idx.size(); ++u) {
    if (!kept[u]) continue;
    std::vector<bool> seen(idx.size(), false);
    std::vector<std::size_t> stack(idx.children()[u].begin(), idx.children()[u].end());
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      if (seen[v]) continue;
      seen[v] = true;
      if (kept[v]) {
        contracted[new_index[u]].push_back(new_index[v]);
      } else {
        for (auto w : idx.children()[v]) stack.push_back(w);
      }
    }
  }
  const auto reduced = graph::transitive_reduction(contracted);
  for (std::size_t u = 0; u < reduced.size(); ++u)
    for (auto v : reduced[u]) out.edges.push_back({out.steps[u].id, out.steps[v].id});
  for (const auto& e : extra_edges) {
    if (!keep.count(e.parent) || !keep.count(e.child))
      throw InvalidWorkflow("condense: extra edge endpoint not kept: " + e.parent + " -> " + e.child);
    if (std::find(out.edges.begin(), out.edges.end(), e) == out.edges.end()) out.edges.push_back(e);
  }
  if (!graph::cyclic_nodes(WorkflowIndex(out).children()).empty())
    throw InvalidWorkflow("condense: extra edges introduce a cycle");

  WorkflowIndex oidx(out);
  std::set<std::string> verdicts;
  for (const auto& v : wf.verdicts)
    if (keep.count(v) && oidx.children()[oidx.at(v)].empty()) verdicts.insert(v);
  if (verdicts.empty())
    for (std::size_t i = 0; i < oidx.size(); ++i)
      if (oidx.children()[i].empty()) verdicts.insert(oidx.id(i));
  for (std::size_t i = 0; i < oidx.size(); ++i) {
    const auto& id = oidx.id(i);
    if (verdicts.count(id))
      out.verdicts.push_back(id);
    else if (oidx.parents()[i].empty())
      out.inputs.push_back(id);
    else
      out.components.push_back(id);
  }
  return out;
}

// Steps kept in the boolean decision graph: boolean answers plus the whitelist.
inline std::set<std::string> boolean_keep_set(const Workflow& wf) {
  std::set<std::string> keep(wf.boolean_view.whitelist.begin(), wf.boolean_view.whitelist.end());
  for (const auto& s : wf.steps)
    if (s.schema == AnswerSchema::boolean_with_text) keep.insert(s.id);
  return keep;
}

// Boolean decision workflow. The confounder (if any) gains an edge to every
// condensed root except itself and the exempt steps.
inline Workflow boolean_workflow(const Workflow& wf) {
  const auto keep = boolean_keep_set(wf);
  CondenseOptions opt{true, {wf.boolean_view.whitelist.begin(), wf.boolean_view.whitelist.end()}};
  auto base = condense(wf, keep, {}, opt);
  const auto& conf = wf.boolean_view.confounder;
  if (conf.empty() || !keep.count(conf)) return base;
  std::set<std::string> exempt(wf.boolean_view.confounder_exempt.begin(), wf.boolean_view.confounder_exempt.end());
  WorkflowIndex bidx(base);
  std::vector<Edge> extra;
  for (std::size_t i = 0; i < bidx.size(); ++i) {
    const auto& id = bidx.id(i);
    if (id != conf && !exempt.count(id) && bidx.parents()[i].empty()) extra.push_back({conf, id});
  }
  return condense(wf, keep, extra, opt);
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const Step& s) {
  j = {{"id", s.id},         {"name", s.name},       {"kind", s.kind},     {"prompt", s.prompt},
       {"description", s.description}, {"example", s.example}, {"schema", s.schema}};
  if (!s.section.empty()) j["section"] = s.section;
  if (s.uses_figures) j["uses_figures"] = true;
}

inline void from_json(const nlohmann::json& j, Step& s) {
  j.at("id").get_to(s.id);
  s.name = j.value("name", "");
  j.at("kind").get_to(s.kind);
  s.prompt = j.value("prompt", "");
  s.description = j.value("description", "");
  s.example = j.value("example", "");
  s.schema = j.value("schema", AnswerSchema::free_text);
  s.section = j.value("section", "");
  s.uses_figures = j.value("uses_figures", false);
}

inline constexpr int kWorkflowFormatVersion = 1;

inline nlohmann::json to_json(const Workflow& wf) {
  nlohmann::json j;
  j["format"] = "nldar-workflow";
  j["version"] = kWorkflowFormatVersion;
  j["id"] = wf.id;
  if (!wf.title.empty()) j["title"] = wf.title;
  j["steps"] = wf.steps;
  j["edges"] = nlohmann::json::array();
  for (const auto& e : wf.edges) j["edges"].push_back({e.parent, e.child});
  j["inputs"] = wf.inputs;
  j["verdicts"] = wf.verdicts;
  j["components"] = wf.components;
  j["preferred_order"] = wf.preferred_order;
  const auto& bv = wf.boolean_view;
  if (!bv.whitelist.empty() || !bv.confounder.empty())
    j["boolean_view"] = {{"whitelist", bv.whitelist},
                         {"confounder", bv.confounder},
                         {"confounder_exempt", bv.confounder_exempt}};
  return j;
}

// Components default to every step outside inputs and verdicts when absent.
inline Workflow workflow_from_json(const nlohmann::json& j) {
  try {
    if (j.contains("version") && j.at("version").get<int>() > kWorkflowFormatVersion)
      throw ParseError("unsupported workflow format version");
    Workflow wf;
    wf.id = j.value("id", "");
    wf.title = j.value("title", "");
    j.at("steps").get_to(wf.steps);
    for (const auto& e : j.at("edges")) wf.edges.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>()});
    wf.inputs = j.value("inputs", std::vector<std::string>{});
    wf.verdicts = j.value("verdicts", std::vector<std::string>{});
    if (j.contains("components")) {
      j.at("components").get_to(wf.components);
    } else {
      std::set<std::string> taken(wf.inputs.begin(), wf.inputs.end());
      taken.insert(wf.verdicts.begin(), wf.verdicts.end());
      for (const auto& s : wf.steps)
        if (!taken.count(s.id)) wf.components.push_back(s.id);
    }
    wf.preferred_order = j.value("preferred_order", std::vector<std::string>{});
    if (j.contains("boolean_view")) {
      const auto& bv = j.at("boolean_view");
      wf.boolean_view.whitelist = bv.value("whitelist", std::vector<std::string>{});
      wf.boolean_view.confounder = bv.value("confounder", "");
      wf.boolean_view.confounder_exempt = bv.value("confounder_exempt", std::vector<std::string>{});
    }
    return wf;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed workflow: ") + e.what());
  }
}

inline Workflow load_workflow(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open workflow file: " + path);
  try {
    return workflow_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("workflow file is not valid JSON: " + std::string(e.what()));
  }
}

}  // namespace nldar
