#pragma once

// HTTP service: stepwise human assessment sessions, resolver runs and
// analysis retrieval. Bearer tokens map to agent pseudonyms; this is a
// research tool, not a hardened multi-tenant server.

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "nldar/analysis.hpp"
#include "nldar/engine.hpp"
#include "nldar/eval.hpp"
#include "nldar/store.hpp"
#include "nldar/variability.hpp"

namespace nldar::service {

// Carries an HTTP status for failures that are not library errors.
class HttpError : public Error {
 public:
  HttpError(int status, const std::string& msg) : Error(msg), status(status) {}
  int status;
};

using ResolverMaker = std::function<std::unique_ptr<Resolver>()>;

struct ServiceConfig {
  std::map<std::string, std::string> tokens;  // bearer token -> agent
  std::size_t workers = 2;
  EngineOptions engine;
  std::map<std::string, ResolverMaker> scripted;  // resolvers selectable by name in run manifests
};

enum class RunStatus { queued, running, done, failed };

NLOHMANN_JSON_SERIALIZE_ENUM(RunStatus, {{RunStatus::queued, "queued"},
                                         {RunStatus::running, "running"},
                                         {RunStatus::done, "done"},
                                         {RunStatus::failed, "failed"}})

struct RunEntry {
  std::string id;
  RunStatus status = RunStatus::queued;
  nlohmann::json manifest;
  std::string error;
  std::optional<ExecutionRecord> record;
  std::optional<RunManifest> run_manifest;
};

inline int status_for(const std::exception& e) {
  if (auto* h = dynamic_cast<const HttpError*>(&e)) return h->status;
  if (dynamic_cast<const NotFound*>(&e)) return 404;
  if (dynamic_cast<const SchemaMismatch*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const InvalidWorkflow*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e))
    return 400;
  if (dynamic_cast<const Inconsistent*>(&e)) return 422;
  if (dynamic_cast<const Error*>(&e)) return 409;
  return 500;
}

class Service {
 public:
  Service(DocumentStore& store, ServiceConfig config) : store_(store), config_(std::move(config)) {
    for (std::size_t i = 0; i < std::max<std::size_t>(1, config_.workers); ++i)
      workers_.emplace_back([this] { work(); });
    routes();
  }

  ~Service() {
    stop();
    {
      std::lock_guard lock(runs_mutex_);
      shutting_down_ = true;
    }
    runs_cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  // Serves on the calling thread until stop().
  void listen(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (listener_.joinable()) listener_.join();
  }

  // -- sessions -------------------------------------------------------------
  // A session is a human execution owned by the token's agent; its cursor is
  // the length of the answered prefix of the linearized step order.

  nlohmann::json open_session(const std::string& agent, const std::string& workflow, const std::string& document) {
    const auto rec = store_.create_execution(workflow, document, agent, Mode::human);
    return progress(rec, *store_.workflow(workflow));
  }

  nlohmann::json next(const std::string& agent, const std::string& session) {
    auto guard = session_lock(session);
    const auto rec = owned(agent, session);
    const auto wf = store_.workflow(rec.workflow);
    const auto order = linearize(*wf);
    const auto cursor = cursor_of(rec, order);
    auto out = progress(rec, *wf);
    if (cursor == order.size()) return out;
    out["payload"] = payload(*wf, store_.document(rec.document), rec, order[cursor]);
    return out;
  }

  nlohmann::json submit(const std::string& agent, const std::string& session, const nlohmann::json& body) {
    auto guard = session_lock(session);
    const auto rec = owned(agent, session);
    const auto wf = store_.workflow(rec.workflow);
    const auto order = linearize(*wf);
    Answer a;
    a.step = body.at("step").get<std::string>();
    a.text = body.value("text", "");
    if (body.contains("boolean") && !body.at("boolean").is_null()) a.boolean = body.at("boolean").get<bool>();
    a.highlights = body.value("highlights", std::vector<Highlight>{});
    a.uncertain = body.value("uncertain", false);
    const auto pos = std::find(order.begin(), order.end(), a.step);
    if (pos == order.end()) throw NotFound("step " + a.step + " is not part of workflow " + wf->id);
    const auto at = static_cast<std::size_t>(pos - order.begin());
    const auto cursor = cursor_of(rec, order);
    if (at > cursor) throw HttpError(409, "step " + a.step + " is ahead of the session cursor");
    const auto& step = WorkflowIndex(*wf).step(a.step);
    if (step.schema == AnswerSchema::boolean_with_text && !a.boolean)
      throw SchemaMismatch("step " + a.step + " needs a yes/no decision");
    const auto updated = store_.record_answer(session, std::move(a));
    return progress(updated, *wf);
  }

  // -- runs -----------------------------------------------------------------

  // Validates synchronously and queues the run.
  std::string trigger_run(const nlohmann::json& manifest) {
    try {
      check_manifest(manifest);
    } catch (const NotFound& e) {
      throw SchemaMismatch(std::string("invalid manifest: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw SchemaMismatch(std::string("invalid manifest: ") + e.what());
    }
    std::lock_guard lock(runs_mutex_);
    std::ostringstream id;
    id << "run-" << std::setw(6) << std::setfill('0') << ++run_counter_;
    runs_[id.str()] = RunEntry{id.str(), RunStatus::queued, manifest, {}, std::nullopt, std::nullopt};
    queue_.push_back(id.str());
    runs_cv_.notify_one();
    return id.str();
  }

  nlohmann::json poll(const std::string& run) const {
    std::lock_guard lock(runs_mutex_);
    auto it = runs_.find(run);
    if (it == runs_.end()) throw NotFound("unknown run: " + run);
    const auto& r = it->second;
    nlohmann::json j = {{"run", r.id}, {"status", r.status}, {"manifest", r.manifest}};
    if (!r.error.empty()) j["error"] = r.error;
    if (r.record) j["record"] = *r.record;
    if (r.run_manifest) j["run_manifest"] = *r.run_manifest;
    return j;
  }

  // Blocks until no run is queued or running.
  void wait_idle() {
    std::unique_lock lock(runs_mutex_);
    idle_cv_.wait(lock, [&] { return queue_.empty() && active_ == 0; });
  }

  // -- analyses -------------------------------------------------------------

  nlohmann::json analysis(const std::string& kind, const std::map<std::string, std::string>& params) const {
    auto param = [&](const std::string& k) -> std::string {
      auto it = params.find(k);
      return it == params.end() ? std::string() : it->second;
    };
    const auto wf_id = param("workflow");
    if (wf_id.empty()) throw SchemaMismatch("missing query parameter: workflow");
    const auto wf = store_.workflow(wf_id);
    const auto document = param("document");
    if (!document.empty()) store_.document(document);
    const auto all = store_.executions(document);
    const auto humans = analysis::humans_of(*wf, all);
    nlohmann::json out = {{"kind", kind}, {"workflow", wf_id}};
    if (!document.empty()) out["document"] = document;

    if (kind == "agreement") {
      out["result"] = analysis::agreement_json(*wf, humans);
    } else if (kind == "ace") {
      const auto f = analysis::fit_scm(*wf, humans);
      const auto target = param("target").empty() ? analysis::default_target(f.model, *wf) : param("target");
      out["result"] = analysis::ace_json(f.model, target, *wf);
    } else if (kind == "counterfactual") {
      const auto f = analysis::fit_scm(*wf, humans);
      const auto exec_id = param("execution");
      if (exec_id.empty()) throw SchemaMismatch("missing query parameter: execution");
      const auto target = param("target").empty() ? analysis::default_target(f.model, *wf) : param("target");
      std::vector<std::string> candidates;
      if (param("candidates").empty()) {
        candidates = analysis::figure_candidates(f.model, *wf);
      } else {
        std::stringstream ss(param("candidates"));
        for (std::string c; std::getline(ss, c, ',');)
          if (!c.empty()) candidates.push_back(c);
      }
      const double threshold = param("threshold").empty() ? 0.5 : std::stod(param("threshold"));
      const auto observed = analysis::observation(f, store_.execution(exec_id));
      out["result"] = analysis::search_json(scm::counterfactual_search(f.model, observed, candidates, target, threshold),
                                            target, observed);
    } else if (kind == "variability") {
      variability::NaiveAnnotator annotator;
      variability::HashingEmbedder embedder;
      out["result"] = variability::to_json(variability::variability_report(*wf, humans, annotator, embedder));
    } else if (kind == "report") {
      std::map<Mode, eval::Condition> by_mode;
      for (const auto& e : all) {
        if (e.mode == Mode::human || e.workflow != wf_id) continue;
        auto& c = by_mode[e.mode];
        c.name = nlohmann::json(e.mode).get<std::string>();
        c.policy = e.mode == Mode::io ? eval::ReferencePolicy::annotator : eval::ReferencePolicy::majority;
        c.executions.push_back(e);
      }
      std::vector<eval::Condition> conditions;
      for (auto& [_, c] : by_mode) conditions.push_back(std::move(c));
      eval::TokenF1Scorer tok;
      variability::HashingEmbedder embedder;
      eval::EmbeddingCosineScorer cos(embedder);
      out["result"] = eval::to_json(eval::report(*wf, humans, conditions, {&tok, &cos}));
    } else {
      throw NotFound("unknown analysis kind: " + kind);
    }
    return out;
  }

  std::string agent_for(const std::string& authorization) const {
    const std::string prefix = "Bearer ";
    if (authorization.rfind(prefix, 0) != 0) throw HttpError(401, "missing bearer token");
    auto it = config_.tokens.find(authorization.substr(prefix.size()));
    if (it == config_.tokens.end()) throw HttpError(401, "unknown token");
    return it->second;
  }

 private:
  static std::size_t cursor_of(const ExecutionRecord& rec, const std::vector<std::string>& order) {
    std::size_t i = 0;
    while (i < order.size() && rec.answers.count(order[i])) ++i;
    return i;
  }

  static nlohmann::json progress(const ExecutionRecord& rec, const Workflow& wf) {
    const auto order = linearize(wf);
    const auto cursor = cursor_of(rec, order);
    std::vector<std::string> stale;
    for (const auto& id : order)
      if (auto it = rec.answers.find(id); it != rec.answers.end() && it->second.stale) stale.push_back(id);
    return {{"session", rec.id},
            {"workflow", rec.workflow},
            {"document", rec.document},
            {"agent", rec.agent},
            {"cursor", cursor},
            {"total", order.size()},
            {"complete", cursor == order.size()},
            {"stale", stale}};
  }

  // Step payload. Infer steps carry parent answers only and no document
  // content (not even highlight offsets).
  static nlohmann::json payload(const Workflow& wf, const Document& doc, const ExecutionRecord& rec,
                                const std::string& step_id) {
    WorkflowIndex idx(wf);
    const auto& step = idx.step(step_id);
    const bool hide = is_infer(step.kind);
    nlohmann::json parents = nlohmann::json::array();
    std::vector<std::string> sections;
    for (const auto& pid : idx.parent_ids(step_id)) {
      const auto& p = idx.step(pid);
      if (p.kind == StepKind::read) sections.push_back(p.section);
      nlohmann::json pj = {{"step", pid}, {"name", p.name}};
      if (auto it = rec.answers.find(pid); it != rec.answers.end()) {
        pj["text"] = it->second.text;
        pj["boolean"] = it->second.boolean ? nlohmann::json(*it->second.boolean) : nlohmann::json();
        pj["uncertain"] = it->second.uncertain;
        pj["stale"] = it->second.stale;
        if (!hide) pj["highlights"] = it->second.highlights;
      }
      parents.push_back(pj);
    }
    if (step.kind == StepKind::read) sections = {step.section};
    nlohmann::json j = {{"step",
                         {{"id", step.id},
                          {"name", step.name},
                          {"kind", step.kind},
                          {"schema", step.schema},
                          {"prompt", step.prompt},
                          {"description", step.description},
                          {"example", step.example}}},
                        {"hide_document", hide},
                        {"parents", parents}};
    if (!hide) {
      nlohmann::json blocks = nlohmann::json::array();
      std::set<std::size_t> seen;
      for (const auto& s : sections) {
        const auto range = doc.section(s);
        for (std::size_t i = range.begin; i < range.end; ++i)
          if (seen.insert(i).second) blocks.push_back(doc.blocks[i]);
      }
      j["document"] = {{"id", doc.id}, {"title", doc.title}, {"blocks", blocks}};
    }
    return j;
  }

  ExecutionRecord owned(const std::string& agent, const std::string& session) const {
    auto rec = store_.execution(session);
    if (rec.mode != Mode::human) throw NotFound("unknown session: " + session);
    if (rec.agent != agent) throw HttpError(403, "session belongs to another agent");
    return rec;
  }

  std::unique_lock<std::mutex> session_lock(const std::string& session) {
    std::shared_ptr<std::mutex> m;
    {
      std::lock_guard lock(sessions_mutex_);
      auto& slot = session_locks_[session];
      if (!slot) slot = std::make_shared<std::mutex>();
      m = slot;
    }
    return std::unique_lock(*m);  // session mutexes are never erased
  }

  void check_manifest(const nlohmann::json& m) const {
    const auto mode = m.at("mode").get<Mode>();
    if (mode == Mode::human) throw SchemaMismatch("runs cannot have mode human");
    store_.workflow(m.at("workflow").get<std::string>());
    const auto doc = m.at("document").get<std::string>();
    store_.document(doc);
    const auto& spec = m.at("resolver");
    const auto kind = spec.at("kind").get<std::string>();
    if (kind == "replay") {
      const auto src = store_.execution(spec.at("execution").get<std::string>());
      if (src.document != doc) throw SchemaMismatch("replay source is for document " + src.document);
    } else if (kind == "scripted") {
      if (!config_.scripted.count(spec.at("name").get<std::string>()))
        throw NotFound("unknown scripted resolver: " + spec.at("name").get<std::string>());
    } else if (kind == "http") {
      ResolverConfig::from_json(spec);
    } else {
      throw SchemaMismatch("unknown resolver kind: " + kind);
    }
    if (mode == Mode::replay && kind != "replay") throw SchemaMismatch("replay mode needs a replay resolver");
    if (mode == Mode::io) {
      const auto src = store_.execution(m.at("source_execution").get<std::string>());
      if (src.mode != Mode::human || src.document != doc)
        throw SchemaMismatch("io source must be a human execution of " + doc);
    }
  }

  RunResult execute(const nlohmann::json& m) {
    const auto mode = m.at("mode").get<Mode>();
    const auto wf = store_.workflow(m.at("workflow").get<std::string>());
    const auto doc = store_.document(m.at("document").get<std::string>());
    const auto& spec = m.at("resolver");
    const auto kind = spec.at("kind").get<std::string>();
    EngineOptions opt = config_.engine;
    opt.seed = m.value("seed", opt.seed);
    opt.exclude_figure_steps = m.value("exclude_figure_steps", opt.exclude_figure_steps);

    std::unique_ptr<Resolver> resolver;
    if (kind == "replay") {
      auto src = store_.execution(spec.at("execution").get<std::string>());
      auto replay = std::make_unique<ReplayResolver>(src);
      if (mode == Mode::replay) return run_replay(*wf, doc, *replay, opt);
      if (opt.agent.empty()) opt.agent = src.agent;
      resolver = std::move(replay);
    } else if (kind == "scripted") {
      resolver = config_.scripted.at(spec.at("name").get<std::string>())();
    } else {
      const auto cfg = ResolverConfig::from_json(spec);
      if (opt.config_hash.empty()) opt.config_hash = cfg.hash();
      resolver = std::make_unique<HttpChatResolver>(cfg);
    }
    switch (mode) {
      case Mode::program:
        return run_program(*wf, doc, *resolver, opt);
      case Mode::isolated:
        return run_isolated(*wf, doc, *resolver, opt);
      case Mode::io:
        return run_io(*wf, doc, *resolver, store_.execution(m.at("source_execution").get<std::string>()), opt);
      default:
        throw SchemaMismatch("unsupported run mode");
    }
  }

  void work() {
    for (;;) {
      std::string id;
      nlohmann::json manifest;
      {
        std::unique_lock lock(runs_mutex_);
        runs_cv_.wait(lock, [&] { return shutting_down_ || !queue_.empty(); });
        if (queue_.empty()) return;
        id = queue_.front();
        queue_.pop_front();
        ++active_;
        runs_[id].status = RunStatus::running;
        manifest = runs_[id].manifest;
      }
      RunEntry done;
      try {
        auto result = execute(manifest);
        store_.put_execution(result.record);
        done.status = RunStatus::done;
        done.record = std::move(result.record);
        done.run_manifest = std::move(result.manifest);
      } catch (const std::exception& e) {
        done.status = RunStatus::failed;
        done.error = e.what();
      }
      {
        std::lock_guard lock(runs_mutex_);
        auto& r = runs_[id];
        r.status = done.status;
        r.error = std::move(done.error);
        r.record = std::move(done.record);
        r.run_manifest = std::move(done.run_manifest);
        --active_;
      }
      idle_cv_.notify_all();
    }
  }

  template <class F>
  void respond(httplib::Response& res, F&& f) {
    try {
      res.status = 200;
      res.set_content(f().dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = status_for(e);
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  void routes() {
    using Req = httplib::Request;
    using Res = httplib::Response;
    server_.Post("/sessions", [this](const Req& req, Res& res) {
      respond(res, [&] {
        const auto agent = agent_for(req.get_header_value("Authorization"));
        const auto body = nlohmann::json::parse(req.body);
        return open_session(agent, body.at("workflow").get<std::string>(), body.at("document").get<std::string>());
      });
      if (res.status == 200) res.status = 201;
    });
    server_.Get(R"(/sessions/([^/]+)/next)", [this](const Req& req, Res& res) {
      respond(res, [&] { return next(agent_for(req.get_header_value("Authorization")), req.matches[1]); });
    });
    server_.Post(R"(/sessions/([^/]+)/answers)", [this](const Req& req, Res& res) {
      respond(res, [&] {
        const auto agent = agent_for(req.get_header_value("Authorization"));
        return submit(agent, req.matches[1], nlohmann::json::parse(req.body));
      });
    });
    server_.Post("/runs", [this](const Req& req, Res& res) {
      respond(res, [&] {
        agent_for(req.get_header_value("Authorization"));
        const auto id = trigger_run(nlohmann::json::parse(req.body));
        return nlohmann::json{{"run", id}, {"status", RunStatus::queued}};
      });
      if (res.status == 200) res.status = 202;
    });
    server_.Get(R"(/runs/([^/]+))", [this](const Req& req, Res& res) {
      respond(res, [&] {
        agent_for(req.get_header_value("Authorization"));
        return poll(req.matches[1]);
      });
    });
    server_.Get(R"(/analyses/([^/]+))", [this](const Req& req, Res& res) {
      respond(res, [&] {
        agent_for(req.get_header_value("Authorization"));
        std::map<std::string, std::string> params;
        for (const auto& [k, v] : req.params) params[k] = v;
        return analysis(req.matches[1], params);
      });
    });
  }

  DocumentStore& store_;
  ServiceConfig config_;
  httplib::Server server_;
  std::thread listener_;

  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<std::mutex>> session_locks_;

  mutable std::mutex runs_mutex_;
  std::condition_variable runs_cv_, idle_cv_;
  std::map<std::string, RunEntry> runs_;
  std::deque<std::string> queue_;
  std::size_t run_counter_ = 0;
  std::size_t active_ = 0;
  bool shutting_down_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace nldar::service
