#pragma once

// Documents, answers and execution records, with their JSON forms.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nldar/error.hpp"
#include "nldar/workflow.hpp"

namespace nldar {

enum class BlockKind { paragraph, figure, table, heading };

NLOHMANN_JSON_SERIALIZE_ENUM(BlockKind, {{BlockKind::paragraph, "paragraph"},
                                         {BlockKind::figure, "figure"},
                                         {BlockKind::table, "table"},
                                         {BlockKind::heading, "heading"}})

struct Block {
  std::string id;
  BlockKind kind = BlockKind::paragraph;
  std::string text;         // paragraph/heading text, or the caption for figures and tables
  std::string image;        // relative path of an image payload
  std::string description;  // human-written description of a figure/table
};

struct SectionRange {
  std::string heading;
  std::size_t begin = 0;  // block index, half-open
  std::size_t end = 0;
};

struct Document {
  std::string id;
  std::string title;
  std::vector<Block> blocks;
  std::vector<SectionRange> sections;

  const Block* block(const std::string& block_id) const {
    auto it = std::find_if(blocks.begin(), blocks.end(), [&](const Block& b) { return b.id == block_id; });
    return it == blocks.end() ? nullptr : &*it;
  }

  // Block range of a section; "*" or an unknown name selects the whole document.
  // Headings match case-insensitively by prefix ("Results" matches "Results and Methods").
  SectionRange section(const std::string& name) const {
    auto lower = [](std::string s) {
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
      return s;
    };
    if (name != "*" && !name.empty()) {
      const auto want = lower(name);
      for (const auto& s : sections)
        if (lower(s.heading).rfind(want, 0) == 0) return s;
    }
    return {"*", 0, blocks.size()};
  }
};

struct Highlight {
  std::string document;
  std::string block;
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const Highlight&, const Highlight&) = default;
};

struct Answer {
  std::string step;
  std::string agent;
  std::string text;
  std::optional<bool> boolean;  // absent when only answered in text
  std::vector<Highlight> highlights;
  bool uncertain = false;
  bool stale = false;
  std::string created;
  std::string revised;
  friend bool operator==(const Answer&, const Answer&) = default;
};

enum class Mode { human, program, io, isolated, replay };

NLOHMANN_JSON_SERIALIZE_ENUM(Mode, {{Mode::human, "human"},
                                    {Mode::program, "program"},
                                    {Mode::io, "io"},
                                    {Mode::isolated, "isolated"},
                                    {Mode::replay, "replay"}})

enum class Outcome { failed, skipped };

NLOHMANN_JSON_SERIALIZE_ENUM(Outcome, {{Outcome::failed, "failed"}, {Outcome::skipped, "skipped"}})

struct StepOutcome {
  Outcome outcome = Outcome::failed;
  std::string reason;
  friend bool operator==(const StepOutcome&, const StepOutcome&) = default;
};

struct ExecutionRecord {
  std::string id;
  std::string workflow;
  std::string document;
  std::string agent;
  Mode mode = Mode::human;
  std::string source_execution;  // io/replay: the human execution the run was based on
  std::map<std::string, Answer> answers;
  std::map<std::string, StepOutcome> outcomes;  // failed or skipped steps
  friend bool operator==(const ExecutionRecord&, const ExecutionRecord&) = default;
};

// ---------------------------------------------------------------------------
// Invariants

inline void check_document(const Document& doc) {
  if (doc.id.empty()) throw ParseError("document id is empty");
  std::set<std::string> ids;
  for (const auto& b : doc.blocks) {
    if (b.id.empty()) throw ParseError("document " + doc.id + ": block without id");
    if (!ids.insert(b.id).second) throw ParseError("document " + doc.id + ": duplicate block id " + b.id);
    if ((b.kind == BlockKind::figure || b.kind == BlockKind::table) && b.text.empty())
      throw ParseError("document " + doc.id + ": figure/table block " + b.id + " has no caption");
  }
  for (const auto& s : doc.sections)
    if (s.begin > s.end || s.end > doc.blocks.size())
      throw ParseError("document " + doc.id + ": section " + s.heading + " out of range");
}

inline void check_highlight(const Document& doc, const Highlight& h) {
  const auto* b = doc.block(h.block);
  if (!b) throw SchemaMismatch("highlight references unknown block " + h.block);
  if (h.start >= h.end || h.end > b->text.size())
    throw SchemaMismatch("highlight span out of range in block " + h.block);
}

// Answer invariants against its step: booleans only on boolean steps,
// highlights only on highlight or extract steps.
inline void check_answer(const Step& step, const Answer& a) {
  if (a.step != step.id) throw SchemaMismatch("answer step " + a.step + " does not match " + step.id);
  if (a.boolean && step.schema != AnswerSchema::boolean_with_text)
    throw SchemaMismatch("step " + step.id + " does not take a boolean answer");
  if (!a.highlights.empty() && step.schema != AnswerSchema::text_with_highlights && step.kind != StepKind::extract)
    throw SchemaMismatch("step " + step.id + " does not take highlights");
}

// Answered steps form a prefix of `order`.
inline bool answers_form_prefix(const ExecutionRecord& rec, const std::vector<std::string>& order) {
  std::size_t i = 0;
  while (i < order.size() && rec.answers.count(order[i])) ++i;
  for (std::size_t j = i; j < order.size(); ++j)
    if (rec.answers.count(order[j])) return false;
  return true;
}

// Leading "yes"/"no" of a text answer, for whitelisted steps without a boolean field.
inline std::optional<bool> leading_yes_no(const std::string& text) {
  std::size_t i = 0;
  while (i < text.size() && !std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
  std::string word;
  while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i])))
    word += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i++])));
  if (word == "yes" || word == "true") return true;
  if (word == "no" || word == "false") return false;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const Block& b) {
  j = {{"id", b.id}, {"kind", b.kind}, {"text", b.text}};
  if (!b.image.empty()) j["image"] = b.image;
  if (!b.description.empty()) j["description"] = b.description;
}

inline void from_json(const nlohmann::json& j, Block& b) {
  j.at("id").get_to(b.id);
  b.kind = j.value("kind", BlockKind::paragraph);
  b.text = j.value("text", j.value("caption", ""));
  b.image = j.value("image", "");
  b.description = j.value("description", "");
}

inline void to_json(nlohmann::json& j, const Highlight& h) {
  j = {{"document", h.document}, {"block", h.block}, {"start", h.start}, {"end", h.end}};
}

inline void from_json(const nlohmann::json& j, Highlight& h) {
  h.document = j.value("document", "");
  j.at("block").get_to(h.block);
  j.at("start").get_to(h.start);
  j.at("end").get_to(h.end);
}

inline void to_json(nlohmann::json& j, const Answer& a) {
  j = {{"step", a.step},
       {"agent", a.agent},
       {"text", a.text},
       {"boolean", a.boolean ? nlohmann::json(*a.boolean) : nlohmann::json(nullptr)},
       {"highlights", a.highlights},
       {"uncertain", a.uncertain},
       {"stale", a.stale}};
  if (!a.created.empty()) j["created"] = a.created;
  if (!a.revised.empty()) j["revised"] = a.revised;
}

inline void from_json(const nlohmann::json& j, Answer& a) {
  j.at("step").get_to(a.step);
  a.agent = j.value("agent", "");
  a.text = j.value("text", "");
  a.boolean.reset();
  if (j.contains("boolean") && !j.at("boolean").is_null()) a.boolean = j.at("boolean").get<bool>();
  a.highlights = j.value("highlights", std::vector<Highlight>{});
  a.uncertain = j.value("uncertain", false);
  a.stale = j.value("stale", false);
  a.created = j.value("created", "");
  a.revised = j.value("revised", "");
}

inline void to_json(nlohmann::json& j, const StepOutcome& o) { j = {{"outcome", o.outcome}, {"reason", o.reason}}; }
inline void from_json(const nlohmann::json& j, StepOutcome& o) {
  j.at("outcome").get_to(o.outcome);
  o.reason = j.value("reason", "");
}

inline void to_json(nlohmann::json& j, const ExecutionRecord& r) {
  j = {{"id", r.id},     {"workflow", r.workflow}, {"document", r.document}, {"agent", r.agent},
       {"mode", r.mode}, {"answers", r.answers},   {"outcomes", r.outcomes}};
  if (!r.source_execution.empty()) j["source_execution"] = r.source_execution;
}

inline void from_json(const nlohmann::json& j, ExecutionRecord& r) {
  j.at("id").get_to(r.id);
  r.workflow = j.value("workflow", "");
  r.document = j.value("document", "");
  r.agent = j.value("agent", "");
  r.mode = j.value("mode", Mode::human);
  r.source_execution = j.value("source_execution", "");
  r.answers = j.value("answers", std::map<std::string, Answer>{});
  r.outcomes = j.value("outcomes", std::map<std::string, StepOutcome>{});
}

// Sections are derived from heading blocks on load and not stored.
inline nlohmann::json to_json(const Document& d) { return {{"id", d.id}, {"title", d.title}, {"blocks", d.blocks}}; }

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// FNV-1a over the canonical JSON dump; used for content-derived ids.
inline std::string content_hash(const std::string& bytes) {
  auto h = fnv1a64(bytes);
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xF];
  return out;
}

// Sections come from heading blocks: each heading opens a section that runs
// to the next heading.
inline Document document_from_json(const nlohmann::json& j) {
  Document d;
  try {
    d.title = j.value("title", "");
    j.at("blocks").get_to(d.blocks);
    d.id = j.value("id", "");
    if (d.id.empty()) d.id = "doc-" + content_hash(j.at("blocks").dump()).substr(0, 12);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed document: ") + e.what());
  }
  for (std::size_t i = 0; i < d.blocks.size(); ++i) {
    if (d.blocks[i].kind != BlockKind::heading) continue;
    if (!d.sections.empty()) d.sections.back().end = i;
    d.sections.push_back({d.blocks[i].text, i, d.blocks.size()});
  }
  check_document(d);
  return d;
}

}  // namespace nldar
