#pragma once

// Scoring executions against human answers: boolean F1, leave-one-out human
// baseline, pluggable text scorers and per-condition score tables.

#include <atomic>
#include <exception>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "nldar/document.hpp"
#include "nldar/error.hpp"
#include "nldar/resolver.hpp"
#include "nldar/store.hpp"
#include "nldar/variability.hpp"
#include "nldar/workflow.hpp"

namespace nldar::eval {

using CellKey = std::pair<std::string, std::string>;  // (document, step)
using variability::MeanStd;

inline std::optional<bool> boolean_of(const Answer& a) { return a.boolean ? a.boolean : leading_yes_no(a.text); }

// ---------------------------------------------------------------------------
// Boolean F1, "yes" is the positive class

struct F1Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t excluded = 0;  // tie references

  std::size_t eligible() const { return tp + fp + fn + tn; }
  // No positives anywhere and no errors counts as perfect.
  double f1() const {
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
};

// A missing prediction (failed step) is scored as the wrong answer.
struct BooleanCase {
  CellKey cell;
  std::optional<bool> prediction;
  Label reference = Label::tie;
};

inline F1Counts tally(const std::vector<BooleanCase>& cases) {
  F1Counts c;
  for (const auto& k : cases) {
    if (k.reference == Label::tie) {
      ++c.excluded;
      continue;
    }
    const bool ref = k.reference == Label::yes;
    const bool pred = k.prediction.value_or(!ref);
    if (pred && ref) ++c.tp;
    else if (pred) ++c.fp;
    else if (ref) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double boolean_f1(const std::vector<BooleanCase>& cases) {
  const auto c = tally(cases);
  if (c.eligible() == 0) throw Error("boolean F1: no eligible cells");
  return c.f1();
}

inline double boolean_f1(const std::map<CellKey, bool>& predictions, const std::map<CellKey, Label>& references) {
  std::vector<BooleanCase> cases;
  for (const auto& [cell, ref] : references) {
    auto it = predictions.find(cell);
    if (it == predictions.end()) throw SchemaMismatch("no prediction for " + cell.first + "/" + cell.second);
    cases.push_back({cell, it->second, ref});
  }
  return boolean_f1(cases);
}

// ---------------------------------------------------------------------------
// Text scorers

class TextScorer {
 public:
  virtual ~TextScorer() = default;
  virtual std::string name() const = 0;
  virtual bool available() const { return true; }
  // Must be safe to call concurrently.
  virtual double score(const std::string& candidate, const std::string& reference) = 0;
};

// F1 over the multisets of lowercased word tokens.
class TokenF1Scorer : public TextScorer {
 public:
  std::string name() const override { return "token_f1"; }

  double score(const std::string& candidate, const std::string& reference) override {
    auto c = bag(candidate), r = bag(reference);
    std::size_t nc = 0, nr = 0, common = 0;
    for (const auto& [t, k] : c) nc += k;
    for (const auto& [t, k] : r) {
      nr += k;
      if (auto it = c.find(t); it != c.end()) common += std::min(k, it->second);
    }
    if (nc == 0 && nr == 0) return 1.0;
    if (common == 0) return 0.0;
    return 2.0 * static_cast<double>(common) / static_cast<double>(nc + nr);
  }

  static std::size_t count(const std::string& text) {
    std::size_t n = 0;
    for (const auto& [_, k] : bag(text)) n += k;
    return n;
  }

 private:
  static std::map<std::string, std::size_t> bag(const std::string& text) {
    std::map<std::string, std::size_t> out;
    for (const auto& t : variability::NaiveAnnotator().annotate(text))
      if (t.pos != "PUNCT") ++out[t.text];
    return out;
  }
};

class EmbeddingCosineScorer : public TextScorer {
 public:
  explicit EmbeddingCosineScorer(variability::Embedder& e) : embedder_(e), cache_(e) {}
  std::string name() const override { return "cosine:" + embedder_.name(); }
  double score(const std::string& candidate, const std::string& reference) override {
    return variability::semantic_similarity(cache_.get(candidate), cache_.get(reference));
  }

 private:
  variability::Embedder& embedder_;
  variability::EmbeddingCache cache_;
};

// Adapter for an external scoring service (NLI, factual consistency, ...).
// POST {"candidate", "reference"} -> {"score"}. Without an endpoint the
// metric is reported as unavailable.
class RemoteScorer : public TextScorer {
 public:
  RemoteScorer(std::string name, ResolverConfig config) : name_(std::move(name)), config_(std::move(config)) {}
  std::string name() const override { return name_; }
  bool available() const override { return !config_.endpoint.empty(); }

  double score(const std::string& candidate, const std::string& reference) override {
    if (!available()) throw Error("scorer " + name_ + " has no endpoint");
    const auto url = split_url(config_.endpoint);
    httplib::Client client(url.scheme_host);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.credential_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
    const nlohmann::json body = {{"model", config_.model}, {"candidate", candidate}, {"reference", reference}};
    auto res = client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) throw Error("scorer " + name_ + " transport failure: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error("scorer " + name_ + " returned HTTP " + std::to_string(res->status));
    try {
      return nlohmann::json::parse(res->body).at("score").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error("unexpected response from scorer " + name_ + ": " + e.what());
    }
  }

 private:
  std::string name_;
  ResolverConfig config_;
};

// ---------------------------------------------------------------------------
// Score rows

enum class ReferencePolicy { majority, annotator };

NLOHMANN_JSON_SERIALIZE_ENUM(ReferencePolicy, {{ReferencePolicy::majority, "majority"},
                                               {ReferencePolicy::annotator, "annotator"}})

// majority: boolean reference is the majority of the cell's annotators.
// annotator: the decision of the human execution the run was based on.
struct Condition {
  std::string name;
  std::vector<ExecutionRecord> executions;
  ReferencePolicy policy = ReferencePolicy::majority;
};

struct ScoreRow {
  std::string condition;
  ReferencePolicy policy = ReferencePolicy::majority;
  std::vector<std::string> scorers;
  std::map<std::string, std::optional<MeanStd>> text;  // nullopt: metric unavailable
  std::optional<double> f1;
  F1Counts counts;
  std::size_t comparisons = 0;
  std::set<CellKey> text_cells;     // eligible for text metrics
  std::set<CellKey> boolean_cells;  // eligible for F1 (ties excluded)
  std::size_t skipped = 0;          // system skipped the step on purpose
  std::size_t failed = 0;           // system failed; scored as empty / wrong
  std::size_t unreferenced = 0;     // no other annotator answered the cell
  std::optional<double> mean_tokens;
  std::optional<double> yes_rate;
};

struct ReportOptions {
  bool include_human_row = true;
  bool include_uncertain = true;
  std::size_t parallelism = 4;
};

namespace detail {

struct HumanIndex {
  std::map<CellKey, std::map<std::string, Answer>> cells;
  std::map<std::string, std::string> agent_of;  // execution id -> agent
  std::set<std::string> documents;
};

inline HumanIndex index_humans(const Workflow& wf, const std::vector<ExecutionRecord>& humans, bool include_uncertain) {
  HumanIndex ix;
  for (const auto& h : humans) {
    if (h.mode != Mode::human) throw Error("reference execution " + h.id + " is not a human execution");
    if (h.workflow != wf.id) throw Error("execution " + h.id + " belongs to workflow " + h.workflow);
    ix.agent_of[h.id] = h.agent;
    ix.documents.insert(h.document);
    for (const auto& [step, a] : h.answers)
      if (include_uncertain || !a.uncertain) ix.cells[{h.document, step}][h.agent] = a;
  }
  return ix;
}

inline std::vector<double> score_all(TextScorer& scorer, const std::vector<std::pair<std::string, std::string>>& pairs,
                                     std::size_t parallelism) {
  std::vector<double> out(pairs.size());
  const auto workers = std::max<std::size_t>(1, std::min(parallelism, pairs.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < pairs.size();) {
      try {
        out[i] = scorer.score(pairs[i].first, pairs[i].second);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
        next = pairs.size();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace detail

// One row per condition. Every system answer is compared with each annotator
// of its cell other than the agent it was derived from; text means are over
// all comparisons, F1 is pooled over cells.
inline ScoreRow score_condition(const Workflow& wf, const detail::HumanIndex& ix, const Condition& cond,
                                const std::vector<TextScorer*>& scorers, const ReportOptions& opt = {}) {
  ScoreRow row;
  row.condition = cond.name;
  row.policy = cond.policy;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<BooleanCase> cases;
  std::vector<double> tokens;
  std::size_t yes = 0, predictions = 0;

  for (const auto& e : cond.executions) {
    if (e.workflow != wf.id) throw Error("execution " + e.id + " belongs to workflow " + e.workflow);
    if (!ix.documents.count(e.document))
      throw Error("mismatched document sets: no human executions for document " + e.document);
    std::string source;
    if (e.mode == Mode::human) {
      source = e.agent;
    } else if (!e.source_execution.empty()) {
      auto it = ix.agent_of.find(e.source_execution);
      if (it == ix.agent_of.end()) throw NotFound("source execution " + e.source_execution + " of " + e.id);
      source = it->second;
    }
    if (cond.policy == ReferencePolicy::annotator && source.empty())
      throw Error("execution " + e.id + " has no source annotator for the annotator reference policy");

    for (const auto& s : wf.steps) {
      if (s.kind == StepKind::read) continue;
      const CellKey cell{e.document, s.id};
      if (auto o = e.outcomes.find(s.id); o != e.outcomes.end() && o->second.outcome == Outcome::skipped) {
        ++row.skipped;
        continue;
      }
      auto ai = e.answers.find(s.id);
      const Answer* cand = ai == e.answers.end() ? nullptr : &ai->second;
      if (!cand && e.mode == Mode::human) continue;  // annotator left it open
      if (!cand) ++row.failed;
      const std::string text = cand ? cand->text : std::string();

      std::map<std::string, Answer> refs;
      if (auto ci = ix.cells.find(cell); ci != ix.cells.end()) refs = ci->second;
      const std::optional<Answer> own = refs.count(source) ? std::optional<Answer>(refs.at(source)) : std::nullopt;
      refs.erase(source);
      if (refs.empty()) {
        ++row.unreferenced;
        continue;
      }
      if (cand) tokens.push_back(static_cast<double>(TokenF1Scorer::count(text)));

      bool any_text = false;
      for (const auto& [agent, r] : refs)
        if (!r.text.empty()) {
          pairs.emplace_back(text, r.text);
          any_text = true;
        }
      if (any_text) row.text_cells.insert(cell);

      if (s.schema != AnswerSchema::boolean_with_text) continue;
      std::optional<Label> ref;
      if (cond.policy == ReferencePolicy::annotator) {
        if (own)
          if (auto b = boolean_of(*own)) ref = *b ? Label::yes : Label::no;
      } else {
        std::vector<bool> votes;
        for (const auto& [_, r] : refs)
          if (auto b = boolean_of(r)) votes.push_back(*b);
        if (!votes.empty()) ref = majority(votes);
      }
      if (!ref) continue;
      const auto pred = cand ? boolean_of(*cand) : std::nullopt;
      if (pred) {
        ++predictions;
        yes += *pred;
      }
      cases.push_back({cell, pred, *ref});
      if (*ref != Label::tie) row.boolean_cells.insert(cell);
    }
  }

  row.comparisons = pairs.size();
  for (auto* sc : scorers) {
    row.scorers.push_back(sc->name());
    if (!sc->available() || pairs.empty()) {
      row.text[sc->name()] = std::nullopt;
      continue;
    }
    row.text[sc->name()] = variability::mean_std(detail::score_all(*sc, pairs, opt.parallelism));
  }
  row.counts = tally(cases);
  if (row.counts.eligible() > 0) row.f1 = row.counts.f1();
  if (!tokens.empty()) row.mean_tokens = variability::mean_std(tokens).mean;
  if (predictions > 0) row.yes_rate = static_cast<double>(yes) / static_cast<double>(predictions);
  return row;
}

// Each annotator against the other annotators of the same cell.
inline ScoreRow leave_one_out_baseline(const Workflow& wf, const std::vector<ExecutionRecord>& humans,
                                       const std::vector<TextScorer*>& scorers, const ReportOptions& opt = {}) {
  const auto ix = detail::index_humans(wf, humans, opt.include_uncertain);
  return score_condition(wf, ix, {"human (leave-one-out)", humans, ReferencePolicy::majority}, scorers, opt);
}

struct Report {
  std::string workflow;
  std::vector<std::string> scorers;
  std::vector<ScoreRow> rows;
};

inline Report report(const Workflow& wf, const std::vector<ExecutionRecord>& humans,
                     const std::vector<Condition>& conditions, const std::vector<TextScorer*>& scorers,
                     const ReportOptions& opt = {}) {
  if (humans.empty()) throw Error("report needs human executions");
  const auto ix = detail::index_humans(wf, humans, opt.include_uncertain);
  Report r;
  r.workflow = wf.id;
  for (auto* s : scorers) r.scorers.push_back(s->name());
  if (opt.include_human_row)
    r.rows.push_back(score_condition(wf, ix, {"human (leave-one-out)", humans, ReferencePolicy::majority}, scorers, opt));
  for (const auto& c : conditions) r.rows.push_back(score_condition(wf, ix, c, scorers, opt));
  return r;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json to_json(const ScoreRow& row) {
  nlohmann::json text = nlohmann::json::object();
  for (const auto& [name, v] : row.text)
    text[name] = v ? nlohmann::json{{"mean", v->mean}, {"std", v->std}, {"n", v->n}} : nlohmann::json("unavailable");
  auto cells = [](const std::set<CellKey>& s) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& [d, st] : s) a.push_back({d, st});
    return a;
  };
  return {{"condition", row.condition},
          {"policy", row.policy},
          {"text", text},
          {"f1", variability::optional_json(row.f1)},
          {"counts",
           {{"tp", row.counts.tp},
            {"fp", row.counts.fp},
            {"fn", row.counts.fn},
            {"tn", row.counts.tn},
            {"ties_excluded", row.counts.excluded}}},
          {"comparisons", row.comparisons},
          {"skipped", row.skipped},
          {"failed", row.failed},
          {"unreferenced", row.unreferenced},
          {"mean_tokens", variability::optional_json(row.mean_tokens)},
          {"yes_rate", variability::optional_json(row.yes_rate)},
          {"eligible", {{"text", cells(row.text_cells)}, {"boolean", cells(row.boolean_cells)}}}};
}

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  return {{"workflow", r.workflow}, {"scorers", r.scorers}, {"rows", rows}};
}

// Long format: one line per (condition, metric).
inline std::string to_csv(const Report& r) {
  std::ostringstream os;
  os.precision(17);
  os << "condition,metric,mean,std,n\n";
  for (const auto& row : r.rows) {
    for (const auto& name : row.scorers) {
      const auto& v = row.text.at(name);
      os << row.condition << ',' << name << ',';
      if (v) os << v->mean << ',' << v->std << ',' << v->n << '\n';
      else os << "unavailable,,\n";
    }
    os << row.condition << ",f1,";
    if (row.f1) os << *row.f1 << ",," << row.counts.eligible() << '\n';
    else os << ",,0\n";
    os << row.condition << ",mean_tokens,";
    if (row.mean_tokens) os << *row.mean_tokens;
    os << ",,\n" << row.condition << ",yes_rate,";
    if (row.yes_rate) os << *row.yes_rate;
    os << ",,\n";
  }
  return os.str();
}

// Fixed-width text table: one column per scorer (mean (std)) and F1.
inline std::string to_table(const Report& r) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header = {"condition"};
  for (const auto& s : r.scorers) header.push_back(s);
  header.push_back("F1");
  grid.push_back(header);
  auto fmt = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
  };
  for (const auto& row : r.rows) {
    std::vector<std::string> line = {row.condition};
    for (const auto& s : r.scorers) {
      const auto& v = row.text.at(s);
      line.push_back(v ? fmt(v->mean) + " (" + fmt(v->std) + ")" : "unavailable");
    }
    line.push_back(row.f1 ? fmt(*row.f1) : "-");
    grid.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream os;
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      os << (i ? "  " : "") << line[i];
      if (i + 1 < line.size()) os << std::string(width[i] - line[i].size(), ' ');
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace nldar::eval
