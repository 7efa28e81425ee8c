#pragma once

// Workflow execution in program / io / isolated / replay modes.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "nldar/document.hpp"
#include "nldar/error.hpp"
#include "nldar/prompt.hpp"
#include "nldar/resolver.hpp"
#include "nldar/workflow.hpp"

namespace nldar {

struct EngineOptions {
  std::size_t parallelism = 4;
  int retries = 3;  // extra attempts after the first
  bool exclude_figure_steps = false;
  std::filesystem::path image_root;
  TemplateSet templates;
  std::string execution_id;  // derived from document, mode and resolver when empty
  std::string agent;         // defaults to the resolver name
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct RunManifest {
  Mode mode = Mode::program;
  std::string workflow;
  std::string document;
  std::string resolver;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string source_execution;
};

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  j = {{"mode", m.mode},         {"workflow", m.workflow},       {"document", m.document},
       {"resolver", m.resolver}, {"config_hash", m.config_hash}, {"seed", m.seed}};
  if (!m.source_execution.empty()) j["source_execution"] = m.source_execution;
}

struct RunResult {
  ExecutionRecord record;
  RunManifest manifest;
  std::map<std::string, StepInputs> inputs;  // what each resolver call was given
  std::size_t calls = 0;                     // resolver invocations, retries included
};

// ---------------------------------------------------------------------------
// Document rendering

inline std::string media_type_for(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

struct RenderedSection {
  std::string text;
  std::vector<Attachment> images;
};

// Section text for a consumer. Figures and tables become their caption plus
// the stored human description, unless the consumer takes images and the
// payload is readable, in which case the image is attached instead.
inline RenderedSection render_section(const Document& doc, const std::string& section, bool with_images,
                                      const std::filesystem::path& image_root) {
  RenderedSection out;
  const auto range = doc.section(section);
  for (std::size_t i = range.begin; i < range.end; ++i) {
    const auto& b = doc.blocks[i];
    std::string piece;
    switch (b.kind) {
      case BlockKind::heading:
        piece = "## " + b.text;
        break;
      case BlockKind::paragraph:
        piece = b.text;
        break;
      case BlockKind::figure:
      case BlockKind::table: {
        piece = b.text;
        bool attached = false;
        if (with_images && !b.image.empty()) {
          std::ifstream in(image_root / b.image, std::ios::binary);
          if (in) {
            std::ostringstream bytes;
            bytes << in.rdbuf();
            out.images.push_back({b.id, b.text, media_type_for(b.image), httplib::detail::base64_encode(bytes.str())});
            attached = true;
          }
        }
        if (!attached && !b.description.empty()) piece += "\nDescription: " + b.description;
        break;
      }
    }
    if (!out.text.empty()) out.text += "\n\n";
    out.text += piece;
  }
  return out;
}

// Text of a highlighted span set, in the order given.
inline std::string excerpt_text(const Document& doc, const std::vector<Highlight>& highlights) {
  std::string out;
  for (const auto& h : highlights) {
    const auto* b = doc.block(h.block);
    if (!b || h.start >= h.end || h.end > b->text.size()) continue;
    if (!out.empty()) out += "\n";
    out += b->text.substr(h.start, h.end - h.start);
  }
  return out;
}

// Parent answer as shown to a child: the boolean decision leads when present.
inline std::string parent_answer_text(const Answer& a) {
  if (!a.boolean) return a.text;
  return std::string(*a.boolean ? "Yes" : "No") + ". " + a.text;
}

// ---------------------------------------------------------------------------

namespace detail {

inline std::string storage_safe(std::string s) {
  for (auto& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-') c = '-';
  return s;
}

// Drop highlight spans that do not fit the document or the step.
inline void sanitize(Answer& a, const Step& step, const Document& doc) {
  if (step.schema != AnswerSchema::text_with_highlights && step.kind != StepKind::extract) {
    a.highlights.clear();
    return;
  }
  std::vector<Highlight> kept;
  for (auto h : a.highlights) {
    if (h.document.empty()) h.document = doc.id;
    if (h.document != doc.id) continue;
    try {
      check_highlight(doc, h);
      kept.push_back(h);
    } catch (const SchemaMismatch&) {
    }
  }
  a.highlights = std::move(kept);
}

struct Task {
  const Step* step = nullptr;
  StepInputs inputs;
  TemplateKind kind = TemplateKind::infer;
};

struct TaskResult {
  std::optional<Answer> answer;
  std::string failure;
  std::size_t calls = 0;
};

inline TaskResult resolve_task(Resolver& resolver, const Task& task, const Document& doc, const EngineOptions& opt) {
  TaskResult r;
  PromptBundle prompt;
  try {
    prompt = assemble_prompt(*task.step, task.inputs, opt.templates, task.kind);
  } catch (const Error& e) {
    r.failure = e.what();
    return r;
  }
  const auto base_user = prompt.user;
  for (int attempt = 0; attempt <= opt.retries; ++attempt) {
    if (attempt > 0)
      prompt.user = base_user + replace_all(opt.templates.reminder, "{format}", format_spec(task.step->schema));
    ++r.calls;
    try {
      const auto raw = resolver.resolve({task.step, prompt, task.inputs, attempt});
      auto a = parse_answer(raw, task.step->schema);
      a.step = task.step->id;
      sanitize(a, *task.step, doc);
      r.answer = std::move(a);
      return r;
    } catch (const ParseError& e) {
      r.failure = std::string("unparsable output: ") + e.what();
    } catch (const ResolverError& e) {
      r.failure = e.what();
    }
  }
  r.failure = "failed after " + std::to_string(r.calls) + " attempts: " + r.failure;
  return r;
}

// Resolve independent tasks with bounded parallelism; results keep task order.
inline std::vector<TaskResult> resolve_all(Resolver& resolver, const std::vector<Task>& tasks, const Document& doc,
                                           const EngineOptions& opt) {
  std::vector<TaskResult> results(tasks.size());
  const auto workers = std::max<std::size_t>(1, std::min(opt.parallelism, tasks.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) results[i] = resolve_task(resolver, tasks[i], doc, opt);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();)
        results[i] = resolve_task(resolver, tasks[i], doc, opt);
    });
  for (auto& t : pool) t.join();
  return results;
}

class Run {
 public:
  Run(const Workflow& wf, const Document& doc, Resolver& resolver, const EngineOptions& opt, Mode mode)
      : wf_(wf), idx_(wf), doc_(doc), resolver_(resolver), opt_(opt), caps_(resolver.capabilities()) {
    detail::require_structure(wf);
    auto& rec = result_.record;
    rec.workflow = wf.id;
    rec.document = doc.id;
    rec.agent = opt.agent.empty() ? resolver.name() : opt.agent;
    rec.mode = mode;
    rec.id = opt.execution_id.empty()
                 ? storage_safe(doc.id + "." + nlohmann::json(mode).get<std::string>() + "." + rec.agent)
                 : opt.execution_id;
    result_.manifest = {mode, wf.id, doc.id, resolver.name(), opt.config_hash, opt.seed, ""};
    const auto order = linearize(wf);
    for (std::size_t i = 0; i < order.size(); ++i) position_[order[i]] = i;
  }

  // Runs layer by layer. `prepare` returns the task for a non-Read step, or
  // a skip reason.
  template <class Prepare>
  RunResult execute(Prepare&& prepare) {
    for (const auto& layer : layers(wf_)) {
      std::vector<Task> tasks;
      for (const auto& id : layer) {
        const auto& step = idx_.step(id);
        if (step.kind == StepKind::read) {
          record_read(step);
          continue;
        }
        if (auto stored = resolver_.recorded_answer(step)) {
          stored->step = id;
          stored->agent = result_.record.agent;
          result_.record.answers[id] = std::move(*stored);
          continue;
        }
        std::string skip;
        auto task = prepare(step, skip);
        if (!skip.empty()) {
          result_.record.outcomes[id] = {Outcome::skipped, skip};
          continue;
        }
        task.step = &step;
        tasks.push_back(std::move(task));
      }
      auto results = resolve_all(resolver_, tasks, doc_, opt_);
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto& id = tasks[i].step->id;
        result_.calls += results[i].calls;
        result_.inputs[id] = std::move(tasks[i].inputs);
        if (results[i].answer) {
          results[i].answer->agent = result_.record.agent;
          result_.record.answers[id] = std::move(*results[i].answer);
        } else {
          result_.record.outcomes[id] = {Outcome::failed, results[i].failure};
        }
      }
    }
    return std::move(result_);
  }

  const WorkflowIndex& index() const { return idx_; }
  const Document& document() const { return doc_; }
  const ResolverCapabilities& caps() const { return caps_; }
  RunResult& result() { return result_; }

  // Parents in linearization order.
  std::vector<std::string> ordered_parents(const Step& step) const {
    auto ps = idx_.parent_ids(step.id);
    std::sort(ps.begin(), ps.end(), [&](const auto& a, const auto& b) { return position_.at(a) < position_.at(b); });
    return ps;
  }

  RenderedSection read_content(const Step& read) const {
    return render_section(doc_, read.section.empty() ? "*" : read.section, caps_.supports_images, opt_.image_root);
  }

 private:
  void record_read(const Step& step) {
    Answer a;
    if (auto replayed = resolver_.recorded_answer(step)) {
      a = *replayed;
    } else {
      a.text = read_content(step).text;
    }
    a.step = step.id;
    a.agent = result_.record.agent;
    result_.record.answers[step.id] = std::move(a);
  }

  const Workflow& wf_;
  WorkflowIndex idx_;
  const Document& doc_;
  Resolver& resolver_;
  const EngineOptions& opt_;
  ResolverCapabilities caps_;
  std::map<std::string, std::size_t> position_;
  RunResult result_;
};

inline void append_images(std::vector<Attachment>& to, std::vector<Attachment> from) {
  for (auto& a : from) to.push_back(std::move(a));
}

}  // namespace detail

// Each step sees the resolver's own prior answers. Failed parents reach
// children as the unavailable sentinel.
inline RunResult run_program(const Workflow& wf, const Document& doc, Resolver& resolver,
                             const EngineOptions& opt = {}) {
  detail::Run run(wf, doc, resolver, opt, Mode::program);
  return run.execute([&](const Step& step, std::string&) {
    detail::Task task;
    task.kind = template_for(step.kind);
    const auto& rec = run.result().record;
    for (const auto& pid : run.ordered_parents(step)) {
      const auto& parent = run.index().step(pid);
      if (parent.kind == StepKind::read) {
        auto content = run.read_content(parent);
        task.inputs.pieces.push_back({pid, parent.name, content.text, Origin::document});
        detail::append_images(task.inputs.images, std::move(content.images));
        continue;
      }
      auto it = rec.answers.find(pid);
      if (it == rec.answers.end())
        task.inputs.pieces.push_back({pid, parent.name, std::string(kUnavailable), Origin::sentinel});
      else
        task.inputs.pieces.push_back({pid, parent.name, parent_answer_text(it->second), Origin::resolver});
    }
    return task;
  });
}

// Same as run_program, recorded as a replay of the resolver's source.
inline RunResult run_replay(const Workflow& wf, const Document& doc, ReplayResolver& resolver,
                            EngineOptions opt = {}) {
  if (opt.execution_id.empty()) opt.execution_id = detail::storage_safe(resolver.source().id + ".replay");
  if (opt.agent.empty()) opt.agent = resolver.source().agent;
  auto r = run_program(wf, doc, resolver, opt);
  r.record.mode = r.manifest.mode = Mode::replay;
  r.record.source_execution = r.manifest.source_execution = resolver.source().id;
  return r;
}

// Each step sees human parent answers, and Extract steps see the excerpts the
// human highlighted for that step (the parent section when there are none).
inline RunResult run_io(const Workflow& wf, const Document& doc, Resolver& resolver, const ExecutionRecord& human,
                        const EngineOptions& opt = {}) {
  if (human.document != doc.id) throw Error("human execution " + human.id + " is for a different document");
  detail::Run run(wf, doc, resolver, opt, Mode::io);
  run.result().record.source_execution = run.result().manifest.source_execution = human.id;
  return run.execute([&](const Step& step, std::string& skip) {
    detail::Task task;
    task.kind = template_for(step.kind);
    if (opt.exclude_figure_steps && step.uses_figures) {
      skip = "figure/table step excluded";
      return task;
    }
    const auto own = human.answers.find(step.id);
    for (const auto& pid : run.ordered_parents(step)) {
      const auto& parent = run.index().step(pid);
      if (parent.kind == StepKind::read) {
        std::string excerpt;
        if (own != human.answers.end()) excerpt = excerpt_text(doc, own->second.highlights);
        if (!excerpt.empty()) {
          task.inputs.pieces.push_back({pid, parent.name, excerpt, Origin::human});
        } else {
          auto content = run.read_content(parent);
          task.inputs.pieces.push_back({pid, parent.name, content.text, Origin::document});
          detail::append_images(task.inputs.images, std::move(content.images));
        }
        continue;
      }
      auto it = human.answers.find(pid);
      if (it == human.answers.end()) {
        skip = "missing human answer for parent " + pid;
        return task;
      }
      task.inputs.pieces.push_back({pid, parent.name, parent_answer_text(it->second), Origin::human});
    }
    return task;
  });
}

// Every non-Read step gets the whole document through the extract template
// and nothing else.
inline RunResult run_isolated(const Workflow& wf, const Document& doc, Resolver& resolver,
                              const EngineOptions& opt = {}) {
  detail::Run run(wf, doc, resolver, opt, Mode::isolated);
  const auto full = render_section(doc, "*", run.caps().supports_images, opt.image_root);
  return run.execute([&](const Step&, std::string&) {
    detail::Task task;
    task.kind = TemplateKind::extract;
    task.inputs.pieces.push_back({"", "document", full.text, Origin::document});
    task.inputs.images = full.images;
    return task;
  });
}

}  // namespace nldar
