#pragma once

// Command-line front end. dispatch() is the whole program; tools/nldar.cpp
// only forwards argv. Exit codes: 0 ok, 1 operation error or failed
// validation, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nldar/analysis.hpp"
#include "nldar/engine.hpp"
#include "nldar/eval.hpp"
#include "nldar/scm.hpp"
#include "nldar/service.hpp"
#include "nldar/store.hpp"
#include "nldar/variability.hpp"
#include "nldar/workflow.hpp"

namespace nldar::cli {

inline constexpr int kUsageError = 2;
inline constexpr int kOperationError = 1;

// Failed validation: output already written, exit 1.
class ValidationFailed : public Error {
 public:
  using Error::Error;
};

struct Common {
  std::uint64_t seed = 0;
  std::string config_path;
  std::string format = "json";
  std::string output;
};

// JSON config: {"resolver": {...}, "embedder": {...}, "scorers": {name: {...}},
// "engine": {"parallelism", "retries"}}.
struct Config {
  nlohmann::json raw = nlohmann::json::object();
  static Config load(const std::string& path) {
    Config c;
    if (path.empty()) return c;
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open config file: " + path);
    try {
      c.raw = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("config file is not valid JSON: " + std::string(e.what()));
    }
    return c;
  }
  bool has(const char* k) const { return raw.contains(k) && !raw.at(k).is_null(); }
};

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + " is not valid JSON: " + e.what());
  }
}

inline Document load_document(const std::string& path) { return document_from_json(read_json_file(path)); }

inline ExecutionRecord load_execution(const std::string& path) {
  try {
    auto j = read_json_file(path);
    if (j.contains("record")) j = j.at("record");  // output of `run`
    return j.get<ExecutionRecord>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + " is not an execution record: " + e.what());
  }
}

// Files, or directories searched recursively for *.json, in path order.
inline std::vector<ExecutionRecord> load_executions(const std::vector<std::string>& paths) {
  std::vector<std::string> files;
  for (const auto& p : paths) {
    if (std::filesystem::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& e : std::filesystem::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".json") found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  std::vector<ExecutionRecord> out;
  for (const auto& f : files) out.push_back(load_execution(f));
  return out;
}

inline std::string num(double v) { return nlohmann::json(v).dump(); }

inline std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string x; std::getline(ss, x, ',');)
    if (!x.empty()) out.push_back(x);
  return out;
}

class Emitter {
 public:
  Emitter(const Common& c, std::ostream& out) : c_(c), out_(out) {}

  // JSON documents always carry the seed.
  void json(nlohmann::json j) {
    if (j.is_object()) j["seed"] = c_.seed;
    text(j.dump(2) + "\n");
  }

  void text(const std::string& s) {
    if (c_.output.empty()) {
      out_ << s;
      return;
    }
    std::ofstream f(c_.output, std::ios::binary);
    if (!f) throw Error("cannot write " + c_.output);
    f << s;
  }

  const std::string& format() const { return c_.format; }

 private:
  const Common& c_;
  std::ostream& out_;
};

// -- subcommand bodies --------------------------------------------------------

inline void cmd_validate(Emitter& em, const std::string& path) {
  const auto wf = load_workflow(path);
  const auto report = validate(wf);
  if (em.format() == "json") {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& x : report) v.push_back({{"code", x.code}, {"message", x.message}, {"ids", x.ids}});
    em.json({{"workflow", wf.id}, {"valid", report.empty()}, {"violations", v}});
  } else if (em.format() == "csv") {
    std::string s = "code,message,ids\n";
    for (const auto& x : report) {
      std::string ids;
      for (const auto& i : x.ids) ids += (ids.empty() ? "" : " ") + i;
      s += x.code + ",\"" + x.message + "\"," + ids + "\n";
    }
    em.text(s);
  } else {
    em.text(report.empty() ? wf.id + ": valid\n" : describe(report) + "\n");
  }
  if (!report.empty()) throw ValidationFailed("workflow " + wf.id + " has " + std::to_string(report.size()) + " violations");
}

inline void cmd_linearize(Emitter& em, const std::string& path) {
  const auto order = linearize(load_workflow(path));
  if (em.format() == "json") {
    em.json({{"order", order}});
  } else {
    std::string s = em.format() == "csv" ? "position,step\n" : "";
    for (std::size_t i = 0; i < order.size(); ++i)
      s += em.format() == "csv" ? std::to_string(i) + "," + order[i] + "\n" : order[i] + "\n";
    em.text(s);
  }
}

inline void cmd_layers(Emitter& em, const std::string& path) {
  const auto ls = layers(load_workflow(path));
  if (em.format() == "json") {
    em.json({{"layers", ls}});
    return;
  }
  std::string s = em.format() == "csv" ? "layer,step\n" : "";
  for (std::size_t i = 0; i < ls.size(); ++i) {
    if (em.format() == "csv") {
      for (const auto& id : ls[i]) s += std::to_string(i) + "," + id + "\n";
    } else {
      s += "layer " + std::to_string(i) + ":";
      for (const auto& id : ls[i]) s += " " + id;
      s += "\n";
    }
  }
  em.text(s);
}

inline void cmd_condense(Emitter& em, const std::string& path, const std::string& keep) {
  const auto wf = load_workflow(path);
  Workflow out;
  if (keep == "boolean") {
    out = boolean_workflow(wf);
  } else {
    const auto ids = split_csv_list(keep);
    if (ids.empty()) throw Error("--keep needs 'boolean' or a comma-separated list of step ids");
    out = condense(wf, std::set<std::string>(ids.begin(), ids.end()));
  }
  em.json(to_json(out));
}

inline void cmd_stats(Emitter& em, const std::string& path) {
  const auto s = stats(load_workflow(path));
  auto r = [](const Rational& q) { return nlohmann::json{{"value", q.value()}, {"exact", q.str()}}; };
  if (em.format() == "json") {
    em.json({{"avg_degree", r(s.avg_degree)},
             {"mean_parents", r(s.mean_parents)},
             {"roots", s.root_count},
             {"terminals", s.terminal_count},
             {"layers", s.layer_count}});
    return;
  }
  std::ostringstream os;
  const bool csv = em.format() == "csv";
  auto row = [&](const std::string& k, const std::string& v) { os << k << (csv ? "," : ": ") << v << "\n"; };
  if (csv) os << "metric,value\n";
  auto fixed2 = [](double v) {
    std::ostringstream f;
    f << std::fixed << std::setprecision(2) << v;
    return f.str();
  };
  row("avg_degree", csv ? num(s.avg_degree.value()) : fixed2(s.avg_degree.value()) + " (" + s.avg_degree.str() + ")");
  row("mean_parents",
      csv ? num(s.mean_parents.value()) : fixed2(s.mean_parents.value()) + " (" + s.mean_parents.str() + ")");
  row("roots", std::to_string(s.root_count));
  row("terminals", std::to_string(s.terminal_count));
  row("layers", std::to_string(s.layer_count));
  em.text(os.str());
}

struct RunArgs {
  std::string workflow, document, mode = "program", source, replay, image_root;
  bool exclude_figures = false;
  std::size_t parallelism = 4;
};

inline void cmd_run(Emitter& em, const Common& c, const RunArgs& a) {
  const auto wf = load_workflow(a.workflow);
  const auto doc = load_document(a.document);
  const auto cfg = Config::load(c.config_path);
  EngineOptions opt;
  opt.seed = c.seed;
  opt.exclude_figure_steps = a.exclude_figures;
  opt.parallelism = a.parallelism;
  opt.image_root = a.image_root.empty() ? std::filesystem::path(a.document).parent_path() : std::filesystem::path(a.image_root);
  if (cfg.has("engine")) {
    opt.parallelism = cfg.raw["engine"].value("parallelism", opt.parallelism);
    opt.retries = cfg.raw["engine"].value("retries", opt.retries);
  }
  const auto mode = nlohmann::json(a.mode).get<Mode>();
  RunResult result;
  if (!a.replay.empty()) {
    ReplayResolver r(load_execution(a.replay));
    if (mode == Mode::replay) {
      result = run_replay(wf, doc, r, opt);
    } else if (mode == Mode::program) {
      opt.agent = r.source().agent;
      result = run_program(wf, doc, r, opt);
    } else {
      throw Error("--replay supports modes replay and program");
    }
  } else {
    if (!cfg.has("resolver")) throw Error("run needs a resolver: pass --config with a 'resolver' entry, or --replay");
    auto rc = ResolverConfig::from_json(cfg.raw["resolver"]);
    if (!rc.seed) rc.seed = c.seed;
    opt.config_hash = rc.hash();
    opt.retries = rc.retries;
    HttpChatResolver r(rc);
    switch (mode) {
      case Mode::program:
        result = run_program(wf, doc, r, opt);
        break;
      case Mode::isolated:
        result = run_isolated(wf, doc, r, opt);
        break;
      case Mode::io:
        if (a.source.empty()) throw Error("io mode needs --source <human execution>");
        result = run_io(wf, doc, r, load_execution(a.source), opt);
        break;
      default:
        throw Error("mode " + a.mode + " needs --replay");
    }
  }
  em.json({{"manifest", result.manifest}, {"calls", result.calls}, {"record", result.record}});
}

inline void cmd_fit(Emitter& em, const std::string& workflow, const std::vector<std::string>& execs, double alpha,
                    bool exclude_uncertain) {
  const auto wf = load_workflow(workflow);
  const auto humans = analysis::humans_of(wf, load_executions(execs));
  scm::FitOptions opt;
  opt.laplace_alpha = alpha;
  em.json(scm::to_json(analysis::fit_scm(wf, humans, !exclude_uncertain, opt).model));
}

inline scm::BooleanScm load_scm(const std::string& path) { return scm::scm_from_json(read_json_file(path)); }

// Default target of a bare SCM: its only sink.
inline std::string sink_of(const scm::BooleanScm& m) {
  const auto ch = m.children();
  std::vector<std::string> sinks;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (ch[i].empty()) sinks.push_back(m.id(i));
  if (sinks.size() != 1) throw Error("SCM has " + std::to_string(sinks.size()) + " sinks; pass --y");
  return sinks.front();
}

inline void cmd_ace(Emitter& em, const Common& c, const std::string& path, const std::string& x, std::string y,
                    std::size_t samples) {
  const auto m = load_scm(path);
  if (y.empty()) y = sink_of(m);
  if (x.empty()) {
    const auto rows = scm::ace_table(m, y);
    if (em.format() == "json") {
      nlohmann::json r = nlohmann::json::array();
      for (const auto& row : rows) r.push_back({{"step", row.step}, {"ace", row.ace}});
      em.json({{"target", y}, {"method", "exact"}, {"rows", r}});
    } else {
      std::string s = em.format() == "csv" ? "step,ace\n" : "";
      for (const auto& row : rows) s += row.step + (em.format() == "csv" ? "," : "\t") + num(row.ace) + "\n";
      em.text(s);
    }
    return;
  }
  if (samples > 0) {
    const auto e = scm::ace_monte_carlo(m, x, y, samples, c.seed);
    if (em.format() == "json")
      em.json({{"x", x}, {"y", y}, {"method", "monte_carlo"}, {"samples", samples}, {"ace", e.value}, {"std_error", e.std_error}});
    else if (em.format() == "csv")
      em.text("x,y,ace,std_error\n" + x + "," + y + "," + num(e.value) + "," + num(e.std_error) + "\n");
    else
      em.text(num(e.value) + "\n");
    return;
  }
  const double v = scm::ace_exact(m, x, y);
  if (em.format() == "json")
    em.json({{"x", x}, {"y", y}, {"method", "exact"}, {"ace", v}});
  else if (em.format() == "csv")
    em.text("x,y,ace\n" + x + "," + y + "," + num(v) + "\n");
  else
    em.text(num(v) + "\n");
}

// Observation for the SCM's nodes from an execution; nodes without an answer
// take the value the model makes more likely (ties false).
inline scm::Assignment observation_from(const scm::BooleanScm& m, const ExecutionRecord& e) {
  scm::Assignment out;
  for (const auto& id : m.ids()) {
    std::optional<bool> v;
    if (auto it = e.answers.find(id); it != e.answers.end()) v = eval::boolean_of(it->second);
    out[id] = v ? *v : scm::marginal(m, id) > 0.5;
  }
  return out;
}

inline void cmd_counterfactual(Emitter& em, const std::string& path, const std::string& observed_path,
                               const std::string& execution_path, std::string target, const std::string& candidates,
                               double threshold) {
  const auto m = load_scm(path);
  if (target.empty()) target = sink_of(m);
  scm::Assignment observed;
  if (!observed_path.empty())
    observed = read_json_file(observed_path).get<scm::Assignment>();
  else if (!execution_path.empty())
    observed = observation_from(m, load_execution(execution_path));
  else
    throw Error("counterfactual needs --observed or --execution");
  const auto ids = split_csv_list(candidates);
  if (ids.empty()) throw Error("--candidates needs at least one node");
  const auto r = scm::counterfactual_search(m, observed, ids, target, threshold);
  if (em.format() == "json") {
    em.json(analysis::search_json(r, target, observed));
    return;
  }
  std::string s = em.format() == "csv" ? "rank," : "";
  if (em.format() == "csv") {
    for (const auto& id : ids) s += id + ",";
    s += "changed,probability\n";
  }
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    const auto& e = r.entries[i];
    if (em.format() == "csv") {
      s += std::to_string(i) + ",";
      for (const auto& id : ids) s += std::string(e.intervention.at(id) ? "1" : "0") + ",";
      s += std::to_string(e.changed) + "," + num(e.probability) + "\n";
    } else {
      std::string bits;
      for (const auto& id : ids) bits += e.intervention.at(id) ? '1' : '0';
      s += bits + "  " + num(e.probability) + "\n";
    }
  }
  em.text(s);
}

inline std::unique_ptr<variability::Embedder> embedder_from(const Config& cfg) {
  if (cfg.has("embedder")) return std::make_unique<variability::HttpEmbedder>(ResolverConfig::from_json(cfg.raw["embedder"]));
  return std::make_unique<variability::HashingEmbedder>();
}

inline void cmd_variability(Emitter& em, const Common& c, const std::string& workflow,
                            const std::vector<std::string>& execs, bool exclude_uncertain) {
  const auto wf = load_workflow(workflow);
  const auto humans = analysis::humans_of(wf, load_executions(execs));
  const auto cfg = Config::load(c.config_path);
  auto embedder = embedder_from(cfg);
  variability::NaiveAnnotator annotator;
  const auto r = variability::variability_report(wf, humans, annotator, *embedder, !exclude_uncertain);
  if (em.format() == "csv") {
    em.text(variability::to_csv(r));
  } else if (em.format() == "json") {
    em.json(variability::to_json(r));
  } else {
    std::ostringstream os;
    auto opt = [](const std::optional<double>& v) { return v ? num(*v) : std::string("n/a"); };
    os << "embedder: " << r.embedder << "\ncells: " << r.cells.size() << "\nalpha: " << opt(r.alpha)
       << "\nmean semantic similarity: " << opt(r.mean_semantic) << "\ndisagreement base rate: "
       << num(r.propagation.base_rate) << "\npropagation rate: " << opt(r.propagation.conditional_rate)
       << "\nkendall tau-b: " << opt(r.tau) << "\n";
    em.text(os.str());
  }
}

inline void cmd_alpha(Emitter& em, const std::string& workflow, const std::vector<std::string>& execs,
                      bool exclude_uncertain) {
  const auto wf = load_workflow(workflow);
  const auto humans = analysis::humans_of(wf, load_executions(execs));
  const auto j = analysis::agreement_json(wf, humans, !exclude_uncertain);
  if (em.format() == "json")
    em.json(j);
  else if (em.format() == "csv")
    em.text("alpha,units,raters\n" + (j["alpha"].is_null() ? std::string() : num(j["alpha"])) + "," +
            j["units"].dump() + "," + std::to_string(j["raters"].size()) + "\n");
  else
    em.text((j["alpha"].is_null() ? std::string("n/a") : num(j["alpha"])) + "\n");
}

inline void cmd_eval(Emitter& em, const Common& c, const std::string& workflow, const std::vector<std::string>& humans_in,
                     const std::vector<std::string>& runs_in, bool no_human_row) {
  const auto wf = load_workflow(workflow);
  const auto humans = analysis::humans_of(wf, load_executions(humans_in));
  const auto cfg = Config::load(c.config_path);
  std::map<Mode, eval::Condition> by_mode;
  for (const auto& e : load_executions(runs_in)) {
    if (e.mode == Mode::human) throw Error("--runs got human execution " + e.id);
    auto& cond = by_mode[e.mode];
    cond.name = nlohmann::json(e.mode).get<std::string>();
    cond.policy = e.mode == Mode::io ? eval::ReferencePolicy::annotator : eval::ReferencePolicy::majority;
    cond.executions.push_back(e);
  }
  std::vector<eval::Condition> conditions;
  for (auto& [_, cond] : by_mode) conditions.push_back(std::move(cond));
  auto embedder = embedder_from(cfg);
  eval::TokenF1Scorer tok;
  eval::EmbeddingCosineScorer cos(*embedder);
  std::vector<std::unique_ptr<eval::RemoteScorer>> remote;
  std::vector<eval::TextScorer*> scorers = {&tok, &cos};
  if (cfg.has("scorers"))
    for (const auto& [name, spec] : cfg.raw["scorers"].items()) {
      remote.push_back(std::make_unique<eval::RemoteScorer>(name, ResolverConfig::from_json(spec)));
      scorers.push_back(remote.back().get());
    }
  eval::ReportOptions opt;
  opt.include_human_row = !no_human_row;
  const auto r = eval::report(wf, humans, conditions, scorers, opt);
  if (em.format() == "csv")
    em.text(eval::to_csv(r));
  else if (em.format() == "table")
    em.text(eval::to_table(r));
  else
    em.json(eval::to_json(r));
}

struct ServeArgs {
  std::string store, host = "127.0.0.1", tokens;
  int port = 8080;
  std::vector<std::string> workflows, documents;
};

inline void cmd_serve(const Common& c, const ServeArgs& a, std::ostream& out) {
  DocumentStore store(a.store);
  for (const auto& w : a.workflows) store.register_workflow(load_workflow(w));
  for (const auto& d : a.documents) store.ingest_document_file(d);
  service::ServiceConfig sc;
  sc.tokens = read_json_file(a.tokens).get<std::map<std::string, std::string>>();
  sc.engine.seed = c.seed;
  const auto cfg = Config::load(c.config_path);
  if (cfg.has("engine")) sc.engine.parallelism = cfg.raw["engine"].value("parallelism", sc.engine.parallelism);
  service::Service svc(store, sc);
  out << "serving on http://" << a.host << ":" << a.port << std::endl;
  svc.listen(a.host, a.port);
}

// -- dispatch -----------------------------------------------------------------

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"nldar: workflow graphs, resolver runs, causal and variability analyses"};
  app.name("nldar");
  app.require_subcommand(1, 1);
  app.fallthrough();
  Common c;
  app.add_option("--seed", c.seed, "random seed, recorded in outputs");
  app.add_option("--config", c.config_path, "JSON config with resolver/embedder/scorer endpoints")->check(CLI::ExistingFile);
  app.add_option("--format", c.format, "output format")->check(CLI::IsMember({"json", "csv", "table"}));
  app.add_option("-o,--output", c.output, "write to file instead of stdout");

  std::string path, keep = "boolean", x, y, observed, execution, target, candidates;
  std::string workflow;
  std::vector<std::string> execs, runs;
  std::size_t samples = 0;
  double threshold = 0.5, alpha = 1.0;
  bool exact = false, exclude_uncertain = false, no_human_row = false;
  RunArgs ra;
  ServeArgs sa;

  auto* validate_cmd = app.add_subcommand("validate", "check a workflow against the structural rules");
  validate_cmd->add_option("workflow", path)->required();
  auto* linearize_cmd = app.add_subcommand("linearize", "questionnaire order of a workflow");
  linearize_cmd->add_option("workflow", path)->required();
  auto* layers_cmd = app.add_subcommand("layers", "longest-path layers of a workflow");
  layers_cmd->add_option("workflow", path)->required();
  auto* condense_cmd = app.add_subcommand("condense", "condense a workflow to a subset of steps");
  condense_cmd->add_option("workflow", path)->required();
  condense_cmd->add_option("--keep", keep, "'boolean' or comma-separated step ids");
  auto* stats_cmd = app.add_subcommand("stats", "graph statistics");
  stats_cmd->add_option("workflow", path)->required();

  auto* run_cmd = app.add_subcommand("run", "execute a workflow on a document with a resolver");
  run_cmd->add_option("--workflow", ra.workflow)->required();
  run_cmd->add_option("--document", ra.document)->required();
  run_cmd->add_option("--mode", ra.mode)->check(CLI::IsMember({"program", "io", "isolated", "replay"}));
  run_cmd->add_option("--source", ra.source, "human execution feeding io mode");
  run_cmd->add_option("--replay", ra.replay, "replay a recorded execution instead of calling a model");
  run_cmd->add_option("--image-root", ra.image_root);
  run_cmd->add_option("--parallelism", ra.parallelism);
  run_cmd->add_flag("--exclude-figures", ra.exclude_figures, "skip figure/table-dependent steps");

  auto* fit_cmd = app.add_subcommand("fit", "fit the boolean SCM on human executions");
  fit_cmd->add_option("--workflow", workflow)->required();
  fit_cmd->add_option("executions", execs, "execution files or directories")->required();
  fit_cmd->add_option("--laplace", alpha, "Laplace smoothing pseudo-count");
  fit_cmd->add_flag("--exclude-uncertain", exclude_uncertain);

  auto* ace_cmd = app.add_subcommand("ace", "average causal effect");
  ace_cmd->add_option("scm", path)->required();
  ace_cmd->add_option("--x", x, "intervened node; omit for a table over all nodes");
  ace_cmd->add_option("--y", y, "outcome node (default: the sink)");
  auto* exact_flag = ace_cmd->add_flag("--exact", exact, "variable elimination (default)");
  ace_cmd->add_option("--samples", samples, "Monte-Carlo estimate with this many samples")->excludes(exact_flag);

  auto* cf_cmd = app.add_subcommand("counterfactual", "counterfactual search over candidate nodes");
  cf_cmd->add_option("scm", path)->required();
  auto* obs_opt = cf_cmd->add_option("--observed", observed, "JSON object node -> bool");
  cf_cmd->add_option("--execution", execution, "execution record supplying the observation")->excludes(obs_opt);
  cf_cmd->add_option("--target", target);
  cf_cmd->add_option("--candidates", candidates, "comma-separated nodes")->required();
  cf_cmd->add_option("--threshold", threshold);

  auto* var_cmd = app.add_subcommand("variability", "inter-annotator variability report");
  var_cmd->add_option("--workflow", workflow)->required();
  var_cmd->add_option("executions", execs)->required();
  var_cmd->add_flag("--exclude-uncertain", exclude_uncertain);

  auto* alpha_cmd = app.add_subcommand("alpha", "Krippendorff's alpha over boolean steps");
  alpha_cmd->add_option("--workflow", workflow)->required();
  alpha_cmd->add_option("executions", execs)->required();
  alpha_cmd->add_flag("--exclude-uncertain", exclude_uncertain);

  auto* eval_cmd = app.add_subcommand("eval", "score runs against human executions");
  eval_cmd->add_option("--workflow", workflow)->required();
  eval_cmd->add_option("--humans", execs)->required();
  eval_cmd->add_option("--runs", runs);
  eval_cmd->add_flag("--no-human-row", no_human_row);

  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");
  serve_cmd->add_option("--store", sa.store)->required();
  serve_cmd->add_option("--tokens", sa.tokens, "JSON object token -> agent")->required();
  serve_cmd->add_option("--host", sa.host);
  serve_cmd->add_option("--port", sa.port);
  serve_cmd->add_option("--workflow", sa.workflows, "workflows to register");
  serve_cmd->add_option("--document", sa.documents, "documents to ingest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    Emitter em(c, out);
    if (validate_cmd->parsed()) cmd_validate(em, path);
    else if (linearize_cmd->parsed()) cmd_linearize(em, path);
    else if (layers_cmd->parsed()) cmd_layers(em, path);
    else if (condense_cmd->parsed()) cmd_condense(em, path, keep);
    else if (stats_cmd->parsed()) cmd_stats(em, path);
    else if (run_cmd->parsed()) cmd_run(em, c, ra);
    else if (fit_cmd->parsed()) cmd_fit(em, workflow, execs, alpha, exclude_uncertain);
    else if (ace_cmd->parsed()) cmd_ace(em, c, path, x, y, samples);
    else if (cf_cmd->parsed()) cmd_counterfactual(em, path, observed, execution, target, candidates, threshold);
    else if (var_cmd->parsed()) cmd_variability(em, c, workflow, execs, exclude_uncertain);
    else if (alpha_cmd->parsed()) cmd_alpha(em, workflow, execs, exclude_uncertain);
    else if (eval_cmd->parsed()) cmd_eval(em, c, workflow, execs, runs, no_human_row);
    else if (serve_cmd->parsed()) cmd_serve(c, sa, out);
  } catch (const ValidationFailed& e) {
    err << "nldar: " << e.what() << "\n";
    return kOperationError;
  } catch (const std::exception& e) {
    err << "nldar: " << e.what() << "\n";
    return kOperationError;
  }
  return 0;
}

}  // namespace nldar::cli
