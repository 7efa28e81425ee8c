#pragma once

// Directory-backed store for documents, workflows and execution records.
//
// Layout under the root:
//   workflows/<workflow>.json
//   documents/<document>/document.json
//   documents/<document>/executions/<execution>.json   current state
//   documents/<document>/executions/<execution>.log    append-only revision log
//   private/pseudonyms.json                              never exported
//
// Everything is cached in memory and written through. Readers run
// concurrently; writes to one execution are serialized, different executions
// are independent.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nldar/document.hpp"
#include "nldar/error.hpp"
#include "nldar/workflow.hpp"

namespace nldar {

enum class Label { yes, no, tie };

inline std::string to_string(Label l) { return l == Label::yes ? "yes" : l == Label::no ? "no" : "tie"; }

using Clock = std::function<std::string()>;

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Ids double as file names.
inline void check_storage_id(const std::string& id, const char* what) {
  const bool ok = !id.empty() && id != "." && id != ".." &&
                  std::all_of(id.begin(), id.end(), [](unsigned char c) {
                    return std::isalnum(c) || c == '-' || c == '_' || c == '.';
                  });
  if (!ok) throw ParseError(std::string("invalid ") + what + " id: '" + id + "'");
}

// Strict majority of non-absent votes; equal counts give a tie.
inline Label majority(const std::vector<bool>& votes) {
  if (votes.empty()) throw NotFound("no boolean votes");
  const auto yes = std::count(votes.begin(), votes.end(), true);
  const auto no = static_cast<std::ptrdiff_t>(votes.size()) - yes;
  return yes > no ? Label::yes : no > yes ? Label::no : Label::tie;
}

class DocumentStore {
 public:
  explicit DocumentStore(std::filesystem::path root, Clock clock = utc_now)
      : root_(std::move(root)), clock_(std::move(clock)) {
    std::filesystem::create_directories(root_ / "workflows");
    std::filesystem::create_directories(root_ / "documents");
    std::filesystem::create_directories(root_ / "private");
    load();
  }

  const std::filesystem::path& root() const { return root_; }

  // -- workflows ------------------------------------------------------------

  void register_workflow(const Workflow& wf) {
    check_storage_id(wf.id, "workflow");
    const auto report = validate(wf);
    if (!report.empty()) throw InvalidWorkflow("cannot register invalid workflow:\n" + describe(report));
    std::unique_lock lock(mutex_);
    write_json(root_ / "workflows" / (wf.id + ".json"), to_json(wf));
    workflows_[wf.id] = std::make_shared<const Workflow>(wf);
  }

  std::shared_ptr<const Workflow> workflow(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = workflows_.find(id);
    if (it == workflows_.end()) throw NotFound("unknown workflow: " + id);
    return it->second;
  }

  // -- documents ------------------------------------------------------------

  // Idempotent on identical content; a known id with different content is an error.
  Document ingest_document(const nlohmann::json& raw) {
    auto doc = document_from_json(raw);
    check_storage_id(doc.id, "document");
    std::unique_lock lock(mutex_);
    if (auto it = documents_.find(doc.id); it != documents_.end()) {
      if (to_json(it->second).dump() != to_json(doc).dump())
        throw Error("document " + doc.id + " already exists with different content");
      return it->second;
    }
    const auto dir = root_ / "documents" / doc.id;
    std::filesystem::create_directories(dir / "executions");
    write_json(dir / "document.json", to_json(doc));
    documents_.emplace(doc.id, doc);
    return doc;
  }

  Document ingest_document_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open document file: " + path.string());
    try {
      return ingest_document(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("document file is not valid JSON: " + std::string(e.what()));
    }
  }

  Document document(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = documents_.find(id);
    if (it == documents_.end()) throw NotFound("unknown document: " + id);
    return it->second;
  }

  bool has_document(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return documents_.count(id) > 0;
  }

  std::vector<std::string> document_ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : documents_) out.push_back(id);
    return out;
  }

  // -- executions -----------------------------------------------------------

  ExecutionRecord create_execution(const std::string& workflow_id, const std::string& document_id,
                                   const std::string& agent, Mode mode = Mode::human) {
    check_storage_id(agent, "agent");
    std::unique_lock lock(mutex_);
    if (!workflows_.count(workflow_id)) throw NotFound("unknown workflow: " + workflow_id);
    if (!documents_.count(document_id)) throw NotFound("unknown document: " + document_id);
    ExecutionRecord rec;
    std::size_t n = 1;
    do {
      rec.id = document_id + "." + agent + "." + std::to_string(n++);
    } while (executions_.count(rec.id));
    rec.workflow = workflow_id;
    rec.document = document_id;
    rec.agent = agent;
    rec.mode = mode;
    persist(rec);
    executions_.emplace(rec.id, Slot{std::make_shared<std::mutex>(), rec});
    return rec;
  }

  // Stores a complete record (engine output, imports). Replaces any record with the same id.
  void put_execution(const ExecutionRecord& rec) {
    check_storage_id(rec.id, "execution");
    std::unique_lock lock(mutex_);
    if (!documents_.count(rec.document)) throw NotFound("unknown document: " + rec.document);
    persist(rec);
    auto& slot = executions_[rec.id];
    if (!slot.lock) slot.lock = std::make_shared<std::mutex>();
    slot.record = rec;
  }

  ExecutionRecord execution(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = executions_.find(id);
    if (it == executions_.end()) throw NotFound("unknown execution: " + id);
    std::lock_guard guard(*it->second.lock);
    return it->second.record;
  }

  std::vector<ExecutionRecord> executions(const std::string& document_id = {},
                                          std::optional<Mode> mode = std::nullopt) const {
    std::shared_lock lock(mutex_);
    std::vector<ExecutionRecord> out;
    for (const auto& [id, slot] : executions_) {
      std::lock_guard guard(*slot.lock);
      if (!document_id.empty() && slot.record.document != document_id) continue;
      if (mode && slot.record.mode != *mode) continue;
      out.push_back(slot.record);
    }
    return out;
  }

  // Stores one answer. First answers need all parent steps answered; a
  // repeated answer is a revision and flags every answered descendant stale.
  ExecutionRecord record_answer(const std::string& execution_id, Answer answer) {
    std::shared_lock lock(mutex_);
    auto it = executions_.find(execution_id);
    if (it == executions_.end()) throw NotFound("unknown execution: " + execution_id);
    std::lock_guard guard(*it->second.lock);
    auto& rec = it->second.record;
    auto wf_it = workflows_.find(rec.workflow);
    if (wf_it == workflows_.end()) throw NotFound("unknown workflow: " + rec.workflow);
    const auto& wf = *wf_it->second;
    WorkflowIndex idx(wf);
    if (!idx.contains(answer.step)) throw NotFound("step " + answer.step + " is not part of workflow " + wf.id);
    const auto& step = idx.step(answer.step);
    check_answer(step, answer);
    const auto& doc = documents_.at(rec.document);
    for (auto& h : answer.highlights) {
      if (h.document.empty()) h.document = doc.id;
      if (h.document != doc.id) throw SchemaMismatch("highlight refers to another document");
      check_highlight(doc, h);
    }

    const auto previous = rec.answers.find(answer.step);
    const bool revision = previous != rec.answers.end();
    if (!revision) {
      for (const auto& p : idx.parent_ids(answer.step))
        if (!rec.answers.count(p)) throw Error("step " + answer.step + " requires answered parent " + p);
    }
    const auto now = clock_();
    answer.agent = rec.agent;
    answer.stale = false;
    answer.created = revision ? previous->second.created : now;
    answer.revised = revision ? now : std::string{};

    std::vector<std::string> flagged;
    if (revision) {
      for (auto d : graph::descendants(idx.children(), idx.at(answer.step))) {
        auto a = rec.answers.find(idx.id(d));
        if (a != rec.answers.end() && !a->second.stale) {
          a->second.stale = true;
          flagged.push_back(a->first);
        }
      }
    }
    rec.answers[answer.step] = answer;
    rec.outcomes.erase(answer.step);
    persist(rec);
    append_log(rec, {{"event", revision ? "revise" : "answer"}, {"answer", answer}, {"stale", flagged}});
    return rec;
  }

  // -- analysis helpers -----------------------------------------------------

  // Majority of boolean votes over human executions of one document and step.
  Label majority_label(const std::string& document_id, const std::string& step_id,
                       bool include_uncertain = true) const {
    std::vector<bool> votes;
    for (const auto& rec : executions(document_id, Mode::human)) {
      if (!rec.workflow.empty()) {
        const auto wf = workflow(rec.workflow);
        WorkflowIndex idx(*wf);
        if (idx.contains(step_id) && idx.step(step_id).schema != AnswerSchema::boolean_with_text)
          throw SchemaMismatch("step " + step_id + " has no boolean answers");
      }
      auto a = rec.answers.find(step_id);
      if (a == rec.answers.end() || !a->second.boolean) continue;
      if (a->second.uncertain && !include_uncertain) continue;
      votes.push_back(*a->second.boolean);
    }
    if (votes.empty()) throw NotFound("no boolean answers for " + document_id + "/" + step_id);
    return majority(votes);
  }

  // Number of human executions of the document that answer the step.
  std::size_t redundancy(const std::string& document_id, const std::string& step_id) const {
    std::size_t n = 0;
    for (const auto& rec : executions(document_id, Mode::human)) n += rec.answers.count(step_id);
    return n;
  }

  // One answer per line: execution, document, mode, step, agent, text,
  // boolean, highlights, uncertain, stale. Agents are pseudonyms already.
  void export_jsonl(std::ostream& os) const {
    for (const auto& rec : executions()) {
      for (const auto& [step, a] : rec.answers) {
        nlohmann::json line = {{"execution", rec.id},
                               {"workflow", rec.workflow},
                               {"document", rec.document},
                               {"mode", rec.mode},
                               {"step", step},
                               {"agent", rec.agent},
                               {"text", a.text},
                               {"boolean", a.boolean ? nlohmann::json(*a.boolean) : nlohmann::json(nullptr)},
                               {"highlights", a.highlights},
                               {"uncertain", a.uncertain},
                               {"stale", a.stale}};
        os << line.dump() << "\n";
      }
    }
  }

  // Rebuilds execution records from an export; documents must already be ingested.
  std::size_t import_jsonl(std::istream& is) {
    std::map<std::string, ExecutionRecord> recs;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("bad export line: " + std::string(e.what()));
      }
      auto& rec = recs[j.at("execution").get<std::string>()];
      rec.id = j.at("execution").get<std::string>();
      rec.workflow = j.value("workflow", "");
      rec.document = j.at("document").get<std::string>();
      rec.mode = j.value("mode", Mode::human);
      rec.agent = j.value("agent", "");
      Answer a = j.get<Answer>();
      rec.answers[a.step] = a;
    }
    for (const auto& [_, rec] : recs) put_execution(rec);
    return recs.size();
  }

  // Random pseudonym per real identity; the mapping stays under private/.
  std::string pseudonym(const std::string& real_identity) {
    std::unique_lock lock(mutex_);
    if (auto it = pseudonyms_.find(real_identity); it != pseudonyms_.end()) return it->second;
    std::random_device rd;
    std::mt19937_64 rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
    std::string p;
    do {
      std::ostringstream os;
      os << "agent-" << std::hex << std::setw(8) << std::setfill('0') << (rng() & 0xffffffffULL);
      p = os.str();
    } while (std::any_of(pseudonyms_.begin(), pseudonyms_.end(), [&](auto& kv) { return kv.second == p; }));
    pseudonyms_[real_identity] = p;
    write_json(root_ / "private" / "pseudonyms.json", pseudonyms_);
    return p;
  }

 private:
  struct Slot {
    std::shared_ptr<std::mutex> lock;
    ExecutionRecord record;
  };

  static void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error("cannot write " + tmp);
      out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
  }

  static nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    return nlohmann::json::parse(in);
  }

  std::filesystem::path execution_path(const ExecutionRecord& rec, const char* ext) const {
    return root_ / "documents" / rec.document / "executions" / (rec.id + ext);
  }

  void persist(const ExecutionRecord& rec) const {
    std::filesystem::create_directories(root_ / "documents" / rec.document / "executions");
    write_json(execution_path(rec, ".json"), rec);
  }

  void append_log(const ExecutionRecord& rec, const nlohmann::json& event) const {
    std::ofstream out(execution_path(rec, ".log"), std::ios::app);
    out << event.dump() << "\n";
  }

  void load() {
    for (const auto& e : std::filesystem::directory_iterator(root_ / "workflows")) {
      if (e.path().extension() != ".json") continue;
      auto wf = std::make_shared<const Workflow>(workflow_from_json(read_json(e.path())));
      workflows_[wf->id] = wf;
    }
    for (const auto& e : std::filesystem::directory_iterator(root_ / "documents")) {
      if (!e.is_directory() || !std::filesystem::exists(e.path() / "document.json")) continue;
      auto doc = document_from_json(read_json(e.path() / "document.json"));
      documents_.emplace(doc.id, doc);
      if (!std::filesystem::exists(e.path() / "executions")) continue;
      for (const auto& x : std::filesystem::directory_iterator(e.path() / "executions")) {
        if (x.path().extension() != ".json") continue;
        auto rec = read_json(x.path()).get<ExecutionRecord>();
        executions_.emplace(rec.id, Slot{std::make_shared<std::mutex>(), rec});
      }
    }
    const auto pmap = root_ / "private" / "pseudonyms.json";
    if (std::filesystem::exists(pmap)) pseudonyms_ = read_json(pmap).get<std::map<std::string, std::string>>();
  }

  std::filesystem::path root_;
  Clock clock_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const Workflow>> workflows_;
  std::map<std::string, Document> documents_;
  std::map<std::string, Slot> executions_;
  std::map<std::string, std::string> pseudonyms_;
};

}  // namespace nldar
