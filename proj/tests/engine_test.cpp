#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <set>

#include "nldar/engine.hpp"
#include "support.hpp"

using namespace nldar;
using nldar::testing::bundled;
using nldar::testing::chain3;
using nldar::testing::human_execution;
using nldar::testing::sample_document;

namespace {

std::string joined_inputs(const ResolveRequest& r) {
  std::string s;
  for (const auto& p : r.inputs.pieces) s += (s.empty() ? "" : "|") + p.text.substr(0, 40);
  return s;
}

// Answers "<id>[<inputs>]"; boolean steps answer yes.
std::string echo(const ResolveRequest& r) {
  nlohmann::json j;
  const auto text = r.step->id + "[" + joined_inputs(r) + "]";
  if (r.step->schema == AnswerSchema::boolean_with_text) {
    j["answer"] = true;
    j["explanation"] = text;
  } else {
    j["answer"] = text;
  }
  return j.dump();
}

Document tiny_document() {
  return document_from_json(nlohmann::json::parse(R"({"id":"tiny","title":"T","blocks":[
    {"id":"h","kind":"heading","text":"Results"},
    {"id":"p1","kind":"paragraph","text":"The knockout abolished growth."},
    {"id":"f1","kind":"figure","text":"Figure 1. Growth curves.","description":"Two curves diverge."}]})"));
}

}  // namespace

// ---------------------------------------------------------------------------
// Answer parsing

TEST(ParseAnswer, BooleanObject) {
  const auto a = parse_answer(R"({"answer": true, "explanation": "controls present"})", AnswerSchema::boolean_with_text);
  ASSERT_TRUE(a.boolean.has_value());
  EXPECT_TRUE(*a.boolean);
  EXPECT_EQ(a.text, "controls present");
}

TEST(ParseAnswer, ObjectEmbeddedInProse) {
  const auto a = parse_answer("Sure! Here it is: {\"answer\": \"no\", \"explanation\": \"missing {n}\"} Hope it helps.",
                              AnswerSchema::boolean_with_text);
  EXPECT_FALSE(*a.boolean);
  EXPECT_EQ(a.text, "missing {n}");
}

TEST(ParseAnswer, SkipsObjectsThatDoNotValidate) {
  const auto a = parse_answer(R"({"note": 1} then {"answer": false, "text": "t", "extra": [1,2]})",
                              AnswerSchema::boolean_with_text);
  EXPECT_FALSE(*a.boolean);
  EXPECT_EQ(a.text, "t");
}

TEST(ParseAnswer, BooleanSchemaNeedsBothFields) {
  EXPECT_THROW(parse_answer(R"({"answer": true})", AnswerSchema::boolean_with_text), ParseError);
  EXPECT_THROW(parse_answer(R"({"explanation": "x"})", AnswerSchema::boolean_with_text), ParseError);
}

TEST(ParseAnswer, NoObjectFails) {
  EXPECT_THROW(parse_answer("I cannot answer that.", AnswerSchema::free_text), ParseError);
  EXPECT_THROW(parse_answer("{\"answer\": \"unterminated\"", AnswerSchema::free_text), ParseError);
}

TEST(ParseAnswer, TextListsAndFlags) {
  const auto a = parse_answer(R"({"answer": ["one", "two"], "uncertain": true})", AnswerSchema::free_text);
  EXPECT_EQ(a.text, "one\ntwo");
  EXPECT_TRUE(a.uncertain);
  EXPECT_FALSE(a.boolean.has_value());
}

// ---------------------------------------------------------------------------
// Prompt assembly

TEST(AssemblePrompt, InferStepListsParentsThenTask) {
  auto step = nldar::testing::make_step("X");
  StepInputs in;
  in.pieces = {{"P1", "Controls", "no issues", Origin::resolver}, {"P2", "Stats", "t-test used", Origin::resolver}};
  const auto p = assemble_prompt(step, in, TemplateSet{}, TemplateKind::infer);
  const auto first = p.user.find("Controls: no issues");
  const auto second = p.user.find("Stats: t-test used");
  const auto task = p.user.find(step.prompt);
  ASSERT_NE(first, std::string::npos);
  ASSERT_NE(second, std::string::npos);
  EXPECT_LT(first, second);
  EXPECT_LT(second, task);
  EXPECT_NE(p.user.find(step.description), std::string::npos);
  EXPECT_NE(p.user.find(R"({"answer": "<your answer>"})"), std::string::npos);
  EXPECT_EQ(p.user.find("{parents}"), std::string::npos);
  EXPECT_EQ(p.user.find("{task}"), std::string::npos);
  EXPECT_EQ(p.system, TemplateSet{}.system);
}

TEST(AssemblePrompt, ExtractStepCarriesDocumentText) {
  auto step = nldar::testing::make_step("E", StepKind::extract);
  StepInputs in;
  in.pieces = {{"R", "Read", "Block one.\n\nBlock two.", Origin::document}};
  const auto p = assemble_prompt(step, in, TemplateSet{}, TemplateKind::extract);
  EXPECT_NE(p.user.find("This is the research article text:\nBlock one.\n\nBlock two."), std::string::npos);
}

TEST(AssemblePrompt, BracesInAnswersAreNotSubstituted) {
  auto step = nldar::testing::make_step("X");
  StepInputs in;
  in.pieces = {{"P", "P", "literal {task} text", Origin::resolver}};
  const auto p = assemble_prompt(step, in, TemplateSet{}, TemplateKind::infer);
  EXPECT_NE(p.user.find("literal {task} text"), std::string::npos);
}

TEST(AssemblePrompt, MissingContentIsAnError) {
  auto step = nldar::testing::make_step("X");
  EXPECT_THROW(assemble_prompt(step, {}, TemplateSet{}, TemplateKind::infer), Error);
  step.prompt.clear();
  StepInputs in;
  in.pieces = {{"P", "P", "x", Origin::resolver}};
  EXPECT_THROW(assemble_prompt(step, in, TemplateSet{}, TemplateKind::infer), Error);
}

TEST(AssemblePrompt, BooleanExampleRenderedInOutputFormat) {
  auto step = nldar::testing::make_step("X", StepKind::infer, AnswerSchema::boolean_with_text);
  step.example = "No, the sample size is too small.";
  EXPECT_EQ(format_example(step), R"({"answer":false,"explanation":"No, the sample size is too small."})");
}

// ---------------------------------------------------------------------------
// Document rendering

TEST(RenderSection, FiguresUseDescriptionsWithoutImageSupport) {
  const auto doc = tiny_document();
  const auto r = render_section(doc, "Results", false, {});
  EXPECT_EQ(r.text,
            "## Results\n\nThe knockout abolished growth.\n\nFigure 1. Growth curves.\nDescription: Two curves diverge.");
  EXPECT_TRUE(r.images.empty());
}

TEST(RenderSection, ImagesAttachedWhenSupported) {
  const auto& doc = sample_document();
  const auto r = render_section(doc, "*", true, nldar::testing::asset("documents"));
  ASSERT_EQ(r.images.size(), 1u);
  EXPECT_EQ(r.images[0].block, "b08");
  EXPECT_EQ(r.images[0].media_type, "image/png");
  EXPECT_EQ(r.images[0].base64.rfind("iVBORw0KGgo", 0), 0u);  // PNG signature
  // b10 has no payload and falls back to its description.
  EXPECT_NE(r.text.find(doc.block("b10")->description), std::string::npos);
  EXPECT_EQ(r.text.find(doc.block("b08")->description), std::string::npos);
}

// ---------------------------------------------------------------------------
// Program mode

TEST(RunProgram, EchoPropagatesThroughChain) {
  ScriptedResolver echo_resolver(echo);
  const auto doc = tiny_document();
  const auto r = run_program(chain3(), doc, echo_resolver);
  EXPECT_EQ(r.record.mode, Mode::program);
  EXPECT_TRUE(r.record.outcomes.empty());
  const auto& c = r.record.answers.at("C");
  EXPECT_NE(c.text.find("C[B[## Results"), std::string::npos);
  EXPECT_TRUE(*c.boolean);
  EXPECT_EQ(r.calls, 2u);  // B and C; A is read without a call
  EXPECT_EQ(r.record.answers.at("A").text, render_section(doc, "*", false, {}).text);
}

TEST(RunProgram, CorruptedUpstreamAnswerChangesSink) {
  const auto doc = tiny_document();
  auto run_with = [&](const std::string& b_answer) {
    ScriptedResolver res([&](const ResolveRequest& r) {
      if (r.step->id == "B") return nlohmann::json{{"answer", b_answer}}.dump();
      return echo(r);
    });
    return run_program(chain3(), doc, res).record.answers.at("C").text;
  };
  const auto clean = run_with("growth abolished");
  const auto corrupt = run_with("growth unchanged");
  EXPECT_EQ(clean, "C[growth abolished]");
  EXPECT_EQ(corrupt, "C[growth unchanged]");
  EXPECT_EQ(run_with("growth abolished"), clean);
}

TEST(RunProgram, FailedStepPassesSentinelDownstream) {
  std::atomic<int> b_calls{0};
  ScriptedResolver res([&](const ResolveRequest& r) -> std::string {
    if (r.step->id == "B") {
      ++b_calls;
      throw ResolverError("backend down");
    }
    return echo(r);
  });
  const auto r = run_program(chain3(), tiny_document(), res);
  ASSERT_TRUE(r.record.outcomes.count("B"));
  EXPECT_EQ(r.record.outcomes.at("B").outcome, Outcome::failed);
  EXPECT_NE(r.record.outcomes.at("B").reason.find("backend down"), std::string::npos);
  EXPECT_EQ(b_calls.load(), 4);  // first attempt plus three retries
  const auto& c_inputs = r.inputs.at("C").pieces;
  ASSERT_EQ(c_inputs.size(), 1u);
  EXPECT_EQ(c_inputs[0].text, kUnavailable);
  EXPECT_EQ(c_inputs[0].origin, Origin::sentinel);
  EXPECT_EQ(r.record.answers.at("C").text, "C[" + std::string(kUnavailable) + "]");
}

TEST(RunProgram, RetriesAppendFormatReminder) {
  std::vector<std::string> prompts;
  std::mutex m;
  ScriptedResolver res([&](const ResolveRequest& r) -> std::string {
    if (r.step->id != "B") return echo(r);
    std::lock_guard lock(m);
    prompts.push_back(r.prompt.user);
    if (r.attempt < 2) return "I think the answer is growth.";
    return R"({"answer": "growth"})";
  });
  const auto r = run_program(chain3(), tiny_document(), res);
  ASSERT_EQ(prompts.size(), 3u);
  EXPECT_EQ(prompts[0].find("could not be parsed"), std::string::npos);
  EXPECT_NE(prompts[1].find("could not be parsed"), std::string::npos);
  EXPECT_EQ(prompts[1].rfind(prompts[0], 0), 0u);
  EXPECT_EQ(r.record.answers.at("B").text, "growth");
  EXPECT_EQ(r.calls, 4u);
}

TEST(RunProgram, UnparsableAfterRetriesIsFailure) {
  ScriptedResolver res([](const ResolveRequest& r) { return r.step->id == "C" ? std::string("maybe") : echo(r); });
  EngineOptions opt;
  opt.retries = 1;
  const auto r = run_program(chain3(), tiny_document(), res, opt);
  EXPECT_EQ(r.record.outcomes.at("C").outcome, Outcome::failed);
  EXPECT_NE(r.record.outcomes.at("C").reason.find("failed after 2 attempts"), std::string::npos);
  EXPECT_FALSE(r.record.answers.count("C"));
}

TEST(RunProgram, StepDispatchedOnlyAfterParentsAreFinal) {
  const auto& wf = bundled();
  WorkflowIndex idx(wf);
  std::mutex m;
  std::set<std::string> done;
  for (const auto& s : wf.steps)
    if (s.kind == StepKind::read) done.insert(s.id);
  std::vector<std::string> violations;
  ScriptedResolver res([&](const ResolveRequest& r) {
    {
      std::lock_guard lock(m);
      for (const auto& p : idx.parent_ids(r.step->id))
        if (!done.count(p)) violations.push_back(r.step->id + "<-" + p);
    }
    std::this_thread::sleep_for(std::chrono::microseconds(200));
    auto out = echo(r);
    std::lock_guard lock(m);
    done.insert(r.step->id);
    return out;
  });
  EngineOptions opt;
  opt.parallelism = 8;
  const auto r = run_program(wf, sample_document(), res, opt);
  EXPECT_TRUE(violations.empty()) << violations.front();
  EXPECT_EQ(r.record.answers.size(), wf.steps.size());
}

TEST(RunProgram, DeterministicAcrossParallelism) {
  ScriptedResolver res(echo);
  EngineOptions serial, parallel;
  serial.parallelism = 1;
  parallel.parallelism = 16;
  const auto a = run_program(bundled(), sample_document(), res, serial);
  const auto b = run_program(bundled(), sample_document(), res, parallel);
  EXPECT_EQ(nlohmann::json(a.record).dump(), nlohmann::json(b.record).dump());
  EXPECT_EQ(a.record.id, "sample-riboswitch.program.scripted");
}

TEST(RunProgram, ImagesReachExtractStepsOnlyWithImageSupport) {
  const auto& wf = bundled();
  EngineOptions opt;
  opt.image_root = nldar::testing::asset("documents");
  ScriptedResolver text_only(echo, {false, true});
  ScriptedResolver multimodal(echo, {true, true});
  std::size_t with_images = 0;
  for (const auto& [id, in] : run_program(wf, sample_document(), text_only, opt).inputs)
    EXPECT_TRUE(in.images.empty()) << id;
  for (const auto& [id, in] : run_program(wf, sample_document(), multimodal, opt).inputs)
    if (!in.images.empty()) ++with_images;
  EXPECT_GT(with_images, 0u);
}

// ---------------------------------------------------------------------------
// Mode isolation via provenance tags

TEST(ModeIsolation, ProgramNeverSeesHumanAnswers) {
  ScriptedResolver res(echo);
  const auto r = run_program(bundled(), sample_document(), res);
  for (const auto& [id, in] : r.inputs)
    for (const auto& p : in.pieces) EXPECT_NE(p.origin, Origin::human) << id;
}

TEST(ModeIsolation, IoNeverChainsResolverAnswers) {
  ScriptedResolver res(echo);
  const auto human = human_execution(bundled(), sample_document());
  const auto r = run_io(bundled(), sample_document(), res, human);
  EXPECT_FALSE(r.inputs.empty());
  for (const auto& [id, in] : r.inputs)
    for (const auto& p : in.pieces) {
      EXPECT_NE(p.origin, Origin::resolver) << id;
      EXPECT_NE(p.origin, Origin::sentinel) << id;
    }
}

TEST(ModeIsolation, IsolatedStepsSeeOnlyTheDocument) {
  ScriptedResolver res(echo);
  const auto r = run_isolated(bundled(), sample_document(), res);
  for (const auto& [id, in] : r.inputs) {
    ASSERT_EQ(in.pieces.size(), 1u) << id;
    EXPECT_EQ(in.pieces[0].origin, Origin::document) << id;
  }
}

// ---------------------------------------------------------------------------
// Isolated mode

TEST(RunIsolated, SinkIndependentOfRoot) {
  const auto doc = tiny_document();
  auto sink_with = [&](const std::string& b_answer) {
    ScriptedResolver res([&](const ResolveRequest& r) {
      if (r.step->id == "B") return nlohmann::json{{"answer", b_answer}}.dump();
      return echo(r);
    });
    return run_isolated(chain3(), doc, res).record.answers.at("C").text;
  };
  EXPECT_EQ(sink_with("one"), sink_with("two"));
}

TEST(RunIsolated, BundledWorkflowCallCount) {
  std::atomic<int> calls{0};
  ScriptedResolver res([&](const ResolveRequest& r) {
    ++calls;
    EXPECT_NE(r.step->kind, StepKind::read);
    EXPECT_NE(r.prompt.user.find("This is the research article text"), std::string::npos);
    return echo(r);
  });
  const auto r = run_isolated(bundled(), sample_document(), res);
  std::size_t reads = 0;
  for (const auto& s : bundled().steps) reads += s.kind == StepKind::read;
  // One call per non-Read step; Read steps record the consumed text.
  EXPECT_EQ(calls.load(), 43);
  EXPECT_EQ(static_cast<std::size_t>(calls.load()), bundled().steps.size() - reads);
  EXPECT_EQ(r.record.answers.size(), bundled().steps.size());
  EXPECT_EQ(r.record.mode, Mode::isolated);
}

// ---------------------------------------------------------------------------
// io mode

TEST(RunIo, ResolverSeesHumanParentTextVerbatim) {
  const auto doc = tiny_document();
  const auto wf = chain3();
  ExecutionRecord human;
  human.id = "tiny.h.1";
  human.document = doc.id;
  human.answers["A"] = {"A", "h", "read"};
  human.answers["B"] = {"B", "h", "no issues"};
  std::string seen;
  ScriptedResolver res([&](const ResolveRequest& r) {
    if (r.step->id == "C") seen = r.prompt.user;
    return echo(r);
  });
  const auto r = run_io(wf, doc, res, human);
  EXPECT_NE(seen.find("B: no issues"), std::string::npos);
  EXPECT_EQ(r.record.source_execution, "tiny.h.1");
  EXPECT_EQ(r.record.mode, Mode::io);
  // B had no highlights, so it received the section text.
  EXPECT_EQ(r.inputs.at("B").pieces.at(0).origin, Origin::document);
}

TEST(RunIo, ExtractStepsUseHumanExcerpts) {
  const auto doc = tiny_document();
  ExecutionRecord human;
  human.id = "tiny.h.1";
  human.document = doc.id;
  Answer b{"B", "h", "abolished"};
  b.highlights = {{doc.id, "p1", 4, 12}};
  human.answers["B"] = b;
  ScriptedResolver res(echo);
  const auto r = run_io(chain3(), doc, res, human);
  const auto& piece = r.inputs.at("B").pieces.at(0);
  EXPECT_EQ(piece.text, "knockout");
  EXPECT_EQ(piece.origin, Origin::human);
}

TEST(RunIo, FigureStepsSkippedWhenExcluded) {
  const auto& wf = bundled();
  const auto human = human_execution(wf, sample_document());
  ScriptedResolver res(echo);
  EngineOptions opt;
  opt.exclude_figure_steps = true;
  const auto r = run_io(wf, sample_document(), res, human, opt);
  std::size_t figure_steps = 0;
  for (const auto& s : wf.steps) {
    if (!s.uses_figures) continue;
    ++figure_steps;
    ASSERT_TRUE(r.record.outcomes.count(s.id)) << s.id;
    EXPECT_EQ(r.record.outcomes.at(s.id).outcome, Outcome::skipped);
    EXPECT_FALSE(r.record.answers.count(s.id));
  }
  EXPECT_EQ(figure_steps, 9u);
  EXPECT_EQ(r.record.outcomes.size(), figure_steps);
}

TEST(RunIo, MissingHumanParentSkipsOnlyThatStep) {
  const auto& wf = bundled();
  WorkflowIndex idx(wf);
  auto human = human_execution(wf, sample_document());
  const std::string dropped = "step015.73";
  ASSERT_TRUE(human.answers.erase(dropped));
  ScriptedResolver res(echo);
  const auto r = run_io(wf, sample_document(), res, human);
  const auto children = idx.child_ids(dropped);
  ASSERT_FALSE(children.empty());
  for (const auto& c : children) {
    ASSERT_TRUE(r.record.outcomes.count(c)) << c;
    EXPECT_EQ(r.record.outcomes.at(c).outcome, Outcome::skipped);
    EXPECT_NE(r.record.outcomes.at(c).reason.find(dropped), std::string::npos);
  }
  EXPECT_EQ(r.record.outcomes.size(), children.size());
  EXPECT_TRUE(r.record.answers.count(dropped));  // io still resolves the step itself
}

TEST(RunIo, RejectsExecutionForAnotherDocument) {
  ScriptedResolver res(echo);
  ExecutionRecord human;
  human.document = "other";
  EXPECT_THROW(run_io(chain3(), tiny_document(), res, human), Error);
}

// ---------------------------------------------------------------------------
// Replay

TEST(RunReplay, ReproducesHumanExecution) {
  const auto& wf = bundled();
  auto human = human_execution(wf, sample_document());
  human.answers.at("step019.60").boolean.reset();  // text-only answer on a boolean step
  human.answers.at("step020.74").uncertain = true;
  ReplayResolver res(human);
  const auto r = run_replay(wf, sample_document(), res);
  EXPECT_EQ(r.record.answers, human.answers);
  EXPECT_TRUE(r.record.outcomes.empty());
  EXPECT_EQ(r.record.mode, Mode::replay);
  EXPECT_EQ(r.record.source_execution, human.id);
  EXPECT_EQ(r.calls, 0u);
}

TEST(RunReplay, MissingStepFails) {
  const auto wf = chain3();
  ExecutionRecord human;
  human.id = "x";
  human.document = "tiny";
  human.answers["A"] = {"A", "h", "read"};
  human.answers["B"] = {"B", "h", "b"};
  ReplayResolver res(human);
  const auto r = run_replay(wf, tiny_document(), res);
  EXPECT_EQ(r.record.outcomes.at("C").outcome, Outcome::failed);
}

// ---------------------------------------------------------------------------
// HTTP transport against a local stub

TEST(HttpChatResolver, SpeaksChatProtocol) {
  httplib::Server server;
  nlohmann::json seen_body;
  std::string seen_auth;
  std::mutex m;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(m);
      seen_body = nlohmann::json::parse(req.body);
      seen_auth = req.get_header_value("Authorization");
    }
    nlohmann::json reply = {
        {"choices", {{{"message", {{"role", "assistant"}, {"content", R"({"answer": "stub says hi"})"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("NLDAR_TEST_KEY", "sekret", 1);
  ResolverConfig cfg = ResolverConfig::from_json(
      {{"endpoint", "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"},
       {"credential_env", "NLDAR_TEST_KEY"},
       {"model", "stub-model"},
       {"supports_images", true}});
  HttpChatResolver res(cfg);
  EngineOptions opt;
  opt.image_root = nldar::testing::asset("documents");
  const auto r = run_isolated(chain3(), sample_document(), res, opt);
  server.stop();
  t.join();

  EXPECT_EQ(r.record.answers.at("B").text, "stub says hi");
  EXPECT_EQ(r.record.outcomes.at("C").outcome, Outcome::failed);  // boolean schema, text-only reply
  EXPECT_EQ(seen_auth, "Bearer sekret");
  EXPECT_EQ(seen_body["model"], "stub-model");
  EXPECT_EQ(seen_body["max_tokens"], 2048);
  EXPECT_DOUBLE_EQ(seen_body["temperature"].get<double>(), 0.0001);
  EXPECT_DOUBLE_EQ(seen_body["top_p"].get<double>(), 0.95);
  EXPECT_DOUBLE_EQ(seen_body["repetition_penalty"].get<double>(), 1.15);
  const auto& msgs = seen_body["messages"];
  ASSERT_EQ(msgs.size(), 4u);  // system, user, image caption, image
  EXPECT_EQ(msgs[0]["role"], "system");
  EXPECT_EQ(msgs[1]["role"], "user");
  EXPECT_EQ(msgs[3]["content"][0]["type"], "image_url");
  EXPECT_EQ(msgs[3]["content"][0]["image_url"]["url"].get<std::string>().rfind("data:image/png;base64,", 0), 0u);
}

TEST(HttpChatResolver, TransportErrorsAreResolverErrors) {
  ResolverConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1/v1/chat/completions";
  cfg.timeout_seconds = 2;
  HttpChatResolver res(cfg);
  auto step = nldar::testing::make_step("X");
  EXPECT_THROW(res.resolve({&step, {}, {}, 0}), ResolverError);
}

TEST(ResolverConfig, HashIgnoresCredentialValueAndTracksParameters) {
  ResolverConfig a;
  a.endpoint = "http://x/v1";
  auto b = a;
  ::setenv(a.credential_env.c_str(), "one", 1);
  const auto h1 = a.hash();
  ::setenv(a.credential_env.c_str(), "two", 1);
  EXPECT_EQ(a.hash(), h1);
  b.generation.temperature = 0.7;
  EXPECT_NE(b.hash(), h1);
  EXPECT_EQ(ResolverConfig::from_json(a.to_json()).hash(), h1);
}
