#pragma once

// Prompt templates, step inputs with provenance, and structured answer parsing.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nldar/document.hpp"
#include "nldar/error.hpp"
#include "nldar/workflow.hpp"

namespace nldar {

// Where an input piece came from. Used to audit information flow between modes.
enum class Origin { document, human, resolver, sentinel };

NLOHMANN_JSON_SERIALIZE_ENUM(Origin, {{Origin::document, "document"},
                                      {Origin::human, "human"},
                                      {Origin::resolver, "resolver"},
                                      {Origin::sentinel, "sentinel"}})

inline constexpr std::string_view kUnavailable = "[unavailable: upstream step failed]";

struct InputPiece {
  std::string step;   // source step id (the Read step for document text)
  std::string label;  // step name shown to the resolver
  std::string text;
  Origin origin = Origin::document;
};

struct Attachment {
  std::string block;
  std::string caption;
  std::string media_type;
  std::string base64;
};

struct StepInputs {
  std::vector<InputPiece> pieces;
  std::vector<Attachment> images;
};

struct PromptBundle {
  std::string system;
  std::string user;
  std::vector<Attachment> attachments;
};

// Chat templates with {parents} {task} {description} {format} {example} slots.
struct TemplateSet {
  std::string system = "You are a biomedical researcher assessing the quality of a research article.";
  std::string extract =
      "This is the research article text:\n"
      "{parents}\n\n"
      "Based on the article text, answer the following question:\n"
      "{task}\n"
      "More specifically, this means: {description}\n\n"
      "Keep your answer concise. Return the answer as a JSON object in the following format:\n"
      "{format}\n\n"
      "Here's an example output for the given question:\n"
      "\"{example}\".\n";
  std::string infer =
      "You already gathered the following insights on the paper by answering a sequence of prior questions:\n\n"
      "Your insights:\n"
      "{parents}\n\n"
      "Based on these prior insights, answer the following question:\n"
      "{task}\n"
      "More specifically, this means: {description}\n\n"
      "Keep your answer concise. Return the answer as a JSON object in the following format:\n"
      "{format}\n\n"
      "Here's an example output for the given question:\n"
      "\"{example}\".\n";
  std::string reminder =
      "\n\nYour previous output could not be parsed. Return only a JSON object in the following format:\n{format}\n";

  static TemplateSet from_json(const nlohmann::json& j) {
    TemplateSet t;
    t.system = j.value("system", t.system);
    t.extract = j.value("extract", t.extract);
    t.infer = j.value("infer", t.infer);
    t.reminder = j.value("reminder", t.reminder);
    return t;
  }
};

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size())
    s.replace(pos, from.size(), to);
  return s;
}

// JSON object shape the resolver must return for a schema.
inline std::string format_spec(AnswerSchema schema) {
  switch (schema) {
    case AnswerSchema::boolean_with_text:
      return R"({"answer": <true or false>, "explanation": "<your explanation>"})";
    case AnswerSchema::text_with_highlights:
    case AnswerSchema::free_text:
      break;
  }
  return R"({"answer": "<your answer>"})";
}

// The step example rendered in the output format.
inline std::string format_example(const Step& step) {
  nlohmann::json j;
  if (step.schema == AnswerSchema::boolean_with_text) {
    j["answer"] = leading_yes_no(step.example).value_or(true);
    j["explanation"] = step.example;
  } else {
    j["answer"] = step.example;
  }
  return j.dump();
}

enum class TemplateKind { extract, infer };

// Document pieces are concatenated as-is; answers become "name: text" lines,
// both in the order given (callers pass linearization order).
inline std::string render_parents(const StepInputs& inputs) {
  std::string out;
  for (const auto& p : inputs.pieces) {
    if (!out.empty()) out += "\n";
    if (p.origin == Origin::document)
      out += p.text;
    else
      out += p.label + ": " + p.text;
  }
  return out;
}

inline PromptBundle assemble_prompt(const Step& step, const StepInputs& inputs, const TemplateSet& templates,
                                    TemplateKind kind) {
  const auto parents = render_parents(inputs);
  if (step.prompt.empty()) throw Error("prompt assembly: step " + step.id + " has no task prompt");
  if (parents.empty()) throw Error("prompt assembly: step " + step.id + " has no parent content");
  std::string user = kind == TemplateKind::extract ? templates.extract : templates.infer;
  // {parents} last so that braces inside answers are never re-substituted.
  user = replace_all(user, "{task}", step.prompt);
  user = replace_all(user, "{description}", step.description);
  user = replace_all(user, "{format}", format_spec(step.schema));
  user = replace_all(user, "{example}", format_example(step));
  const auto at = user.find("{parents}");
  if (at == std::string::npos) throw Error("prompt assembly: template has no {parents} slot");
  user.replace(at, 9, parents);
  return {templates.system, user, inputs.images};
}

inline TemplateKind template_for(StepKind kind) {
  return kind == StepKind::extract || kind == StepKind::read ? TemplateKind::extract : TemplateKind::infer;
}

// ---------------------------------------------------------------------------
// Answer parsing

namespace detail {

// End index (exclusive) of the balanced object starting at `open`, or npos.
inline std::size_t balanced_end(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"')
      in_string = true;
    else if (c == '{')
      ++depth;
    else if (c == '}' && --depth == 0)
      return i + 1;
  }
  return std::string_view::npos;
}

inline std::optional<bool> as_bool(const nlohmann::json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) return leading_yes_no(v.get<std::string>());
  return std::nullopt;
}

inline std::optional<std::string> as_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) {
      if (!e.is_string()) return std::nullopt;
      if (!out.empty()) out += "\n";
      out += e.get<std::string>();
    }
    return out;
  }
  return std::nullopt;
}

inline std::optional<Answer> answer_from_object(const nlohmann::json& obj, AnswerSchema schema) {
  if (!obj.is_object()) return std::nullopt;
  Answer a;
  if (schema == AnswerSchema::boolean_with_text) {
    std::optional<bool> b;
    for (const char* key : {"answer", "decision", "boolean"})
      if (obj.contains(key) && (b = as_bool(obj.at(key)))) break;
    std::optional<std::string> text;
    for (const char* key : {"explanation", "text", "reason"})
      if (obj.contains(key) && (text = as_text(obj.at(key)))) break;
    if (!b || !text) return std::nullopt;
    a.boolean = b;
    a.text = *text;
  } else {
    std::optional<std::string> text;
    for (const char* key : {"answer", "text", "explanation"})
      if (obj.contains(key) && (text = as_text(obj.at(key)))) break;
    if (!text) return std::nullopt;
    a.text = *text;
  }
  if (obj.contains("uncertain") && obj.at("uncertain").is_boolean()) a.uncertain = obj.at("uncertain").get<bool>();
  if (obj.contains("highlights") && obj.at("highlights").is_array()) {
    try {
      a.highlights = obj.at("highlights").get<std::vector<Highlight>>();
    } catch (const nlohmann::json::exception&) {
      a.highlights.clear();
    }
  }
  return a;
}

}  // namespace detail

// First balanced JSON object in `raw` that satisfies the schema. Prose around
// it and unknown fields are ignored.
inline Answer parse_answer(std::string_view raw, AnswerSchema schema) {
  for (std::size_t open = raw.find('{'); open != std::string_view::npos; open = raw.find('{', open + 1)) {
    const auto end = detail::balanced_end(raw, open);
    if (end == std::string_view::npos) continue;
    const auto obj = nlohmann::json::parse(raw.substr(open, end - open), nullptr, false);
    if (obj.is_discarded()) continue;
    if (auto a = detail::answer_from_object(obj, schema)) return *a;
  }
  throw ParseError("no structured answer matching schema " + to_string(schema));
}

}  // namespace nldar
