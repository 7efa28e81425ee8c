#pragma once

// Analyses over stored executions, shared by the CLI and the service.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nldar/document.hpp"
#include "nldar/scm.hpp"
#include "nldar/variability.hpp"
#include "nldar/workflow.hpp"

namespace nldar::analysis {

inline std::vector<ExecutionRecord> humans_of(const Workflow& wf, const std::vector<ExecutionRecord>& execs) {
  std::vector<ExecutionRecord> out;
  for (const auto& e : execs)
    if (e.mode == Mode::human && e.workflow == wf.id) out.push_back(e);
  return out;
}

struct FittedScm {
  Workflow boolean_wf;
  scm::BooleanScm model;
  scm::BooleanTable data;
};

inline FittedScm fit_scm(const Workflow& wf, const std::vector<ExecutionRecord>& humans, bool include_uncertain = true,
                         const scm::FitOptions& opt = {}) {
  if (humans.empty()) throw Error("no human executions to fit on");
  auto bwf = boolean_workflow(wf);
  auto table = scm::boolean_table(bwf, humans, include_uncertain);
  auto model = scm::fit(scm::BooleanScm(bwf), table, opt);
  return {std::move(bwf), std::move(model), std::move(table)};
}

// The verdict of the boolean graph, or its only sink.
inline std::string default_target(const scm::BooleanScm& m, const Workflow& original) {
  for (const auto& v : original.verdicts)
    if (m.contains(v)) return v;
  std::vector<std::string> sinks;
  const auto children = m.children();
  for (std::size_t i = 0; i < m.size(); ++i)
    if (children[i].empty()) sinks.push_back(m.id(i));
  if (sinks.size() != 1) throw Error("no unique target; pass one explicitly");
  return sinks.front();
}

// Figure/table-dependent steps kept in the model.
inline std::vector<std::string> figure_candidates(const scm::BooleanScm& m, const Workflow& original) {
  std::vector<std::string> out;
  for (const auto& s : original.steps)
    if (s.uses_figures && m.contains(s.id)) out.push_back(s.id);
  return out;
}

inline nlohmann::json ace_json(const scm::BooleanScm& m, const std::string& target, const Workflow& original) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : scm::ace_table(m, target, &original))
    rows.push_back({{"step", r.step}, {"prompt", r.prompt}, {"ace", r.ace}});
  return {{"target", target}, {"rows", rows}};
}

// Observation from one execution; unanswered nodes are completed by majority.
inline scm::Assignment observation(const FittedScm& f, const ExecutionRecord& e, bool include_uncertain = true) {
  const auto row = scm::boolean_table(f.boolean_wf, {e}, include_uncertain);
  std::map<std::string, std::optional<bool>> partial;
  for (std::size_t c = 0; c < row.columns.size(); ++c) partial[row.columns[c]] = row.rows.at(0)[c];
  return scm::majority_fill(f.model, partial, f.data);
}

inline nlohmann::json search_json(const scm::SearchResult& r, const std::string& target, const scm::Assignment& observed) {
  auto entry = [](const scm::SearchEntry& e) {
    return nlohmann::json{{"intervention", e.intervention}, {"probability", e.probability}, {"changed", e.changed}};
  };
  nlohmann::json entries = nlohmann::json::array(), minimal = nlohmann::json::array();
  for (const auto& e : r.entries) entries.push_back(entry(e));
  for (const auto& e : r.minimal_flips) minimal.push_back(entry(e));
  return {{"target", target},
          {"observed", observed},
          {"factual_target", r.factual_target},
          {"entries", entries},
          {"minimal_flips", minimal}};
}

inline nlohmann::json agreement_json(const Workflow& wf, const std::vector<ExecutionRecord>& humans,
                                     bool include_uncertain = true) {
  const auto keep = boolean_keep_set(wf);
  const auto m = variability::boolean_matrix({keep.begin(), keep.end()}, humans, include_uncertain);
  nlohmann::json j = {{"units", m.units.size()}, {"raters", m.raters}};
  try {
    j["alpha"] = variability::krippendorff_alpha(m.values);
  } catch (const Error& e) {
    j["alpha"] = nullptr;
    j["reason"] = e.what();
  }
  return j;
}

}  // namespace nldar::analysis
