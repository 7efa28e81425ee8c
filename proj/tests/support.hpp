#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "nldar/document.hpp"
#include "nldar/scm.hpp"
#include "nldar/workflow.hpp"

namespace nldar::testing {

inline std::string asset(const std::string& rel) { return std::string(NLDAR_ASSET_DIR) + "/" + rel; }

inline const Workflow& bundled() {
  static const Workflow wf = load_workflow(asset("workflows/biomedical.json"));
  return wf;
}

inline const Document& sample_document() {
  static const Document doc = [] {
    std::ifstream in(asset("documents/sample_paper.json"));
    return document_from_json(nlohmann::json::parse(in));
  }();
  return doc;
}

// A complete human execution of `wf` on `doc`: boolean steps alternate yes/no,
// extract steps highlight the first paragraph of their section.
inline ExecutionRecord human_execution(const Workflow& wf, const Document& doc, const std::string& agent = "h1") {
  ExecutionRecord rec;
  rec.id = doc.id + "." + agent + ".1";
  rec.workflow = wf.id;
  rec.document = doc.id;
  rec.agent = agent;
  rec.mode = Mode::human;
  std::size_t n = 0;
  for (const auto& s : wf.steps) {
    Answer a;
    a.step = s.id;
    a.agent = agent;
    a.text = agent + " on " + s.name;
    if (s.schema == AnswerSchema::boolean_with_text) a.boolean = (n++ % 2) == 0;
    if (s.kind == StepKind::extract) {
      for (const auto& b : doc.blocks)
        if (b.kind == BlockKind::paragraph) {
          a.highlights.push_back({doc.id, b.id, 0, b.text.size()});
          break;
        }
    }
    rec.answers[s.id] = a;
  }
  return rec;
}

inline Step make_step(std::string id, StepKind kind = StepKind::infer,
                      AnswerSchema schema = AnswerSchema::free_text) {
  Step s;
  s.id = id;
  s.name = id;
  s.kind = kind;
  s.prompt = "prompt for " + id;
  s.description = "describe " + id;
  s.example = "example " + id;
  s.schema = schema;
  return s;
}

// Bare graph: every step an infer step, sets derived from roots and sinks.
inline Workflow graph_workflow(const std::vector<std::string>& ids, const std::vector<Edge>& edges) {
  Workflow wf;
  wf.id = "test";
  for (const auto& id : ids) wf.steps.push_back(make_step(id));
  wf.edges = edges;
  WorkflowIndex idx(wf);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx.parents()[i].empty() && !idx.children()[i].empty())
      wf.inputs.push_back(ids[i]);
    else if (idx.children()[i].empty())
      wf.verdicts.push_back(ids[i]);
    else
      wf.components.push_back(ids[i]);
  }
  return wf;
}

// A -> B -> C with A an extract-fed read input.
inline Workflow chain3() {
  Workflow wf;
  wf.id = "chain";
  wf.steps = {make_step("A", StepKind::read), make_step("B", StepKind::extract),
              make_step("C", StepKind::infer, AnswerSchema::boolean_with_text)};
  wf.edges = {{"A", "B"}, {"B", "C"}};
  wf.inputs = {"A"};
  wf.components = {"B"};
  wf.verdicts = {"C"};
  wf.preferred_order = {"A", "B", "C"};
  return wf;
}

// Random DAG over n nodes: edges only from lower to higher index.
inline Workflow random_dag(std::mt19937_64& rng, std::size_t n, double density) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("n" + std::to_string(i));
  std::bernoulli_distribution coin(density);
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (coin(rng)) edges.push_back({ids[u], ids[v]});
  // Shuffle the id listing so index order is not topological.
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::string> shuffled;
  for (auto p : perm) shuffled.push_back(ids[p]);
  return graph_workflow(shuffled, edges);
}

// Floyd-Warshall transitive closure keyed by id.
inline std::set<std::pair<std::string, std::string>> closure_oracle(const Workflow& wf) {
  const auto n = wf.steps.size();
  std::vector<std::vector<bool>> r(n, std::vector<bool>(n, false));
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < n; ++i) at[wf.steps[i].id] = i;
  for (const auto& e : wf.edges) r[at[e.parent]][at[e.child]] = true;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (r[i][k])
        for (std::size_t j = 0; j < n; ++j)
          if (r[k][j]) r[i][j] = true;
  std::set<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (r[i][j]) out.emplace(wf.steps[i].id, wf.steps[j].id);
  return out;
}

// Random SCM on a random DAG with CPT entries in [0,1], occasionally 0 or 1.
inline scm::BooleanScm random_scm(std::mt19937_64& rng, std::size_t n) {
  auto wf = nldar::testing::random_dag(rng, n, 0.4);
  scm::BooleanScm m(wf);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t v = 0; v < m.size(); ++v) {
    std::vector<double> t(m.cpt(v).size());
    for (auto& p : t) {
      const double r = u(rng);
      p = r < 0.05 ? 0.0 : r > 0.95 ? 1.0 : u(rng);
    }
    m.set_cpt(m.id(v), t);
  }
  return m;
}

// Oracle: P(y=1) by enumerating all 2^n worlds with independent products.
inline double brute_marginal(const scm::BooleanScm& m, std::size_t y) {
  const auto n = m.size();
  double total = 0;
  std::vector<bool> world(n);
  for (std::size_t bits = 0; bits < (std::size_t{1} << n); ++bits) {
    for (std::size_t v = 0; v < n; ++v) world[v] = (bits >> v) & 1U;
    double pr = 1;
    for (std::size_t v = 0; v < n && pr > 0; ++v) {
      const double p = m.p(v, world);
      pr *= world[v] ? p : 1 - p;
    }
    if (world[y]) total += pr;
  }
  return total;
}

inline double brute_ace(const scm::BooleanScm& m, const std::string& x, const std::string& y) {
  return brute_marginal(m.intervene({{x, true}}), m.index(y)) - brute_marginal(m.intervene({{x, false}}), m.index(y));
}

}  // namespace nldar::testing
