#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <thread>

#include "nldar/store.hpp"
#include "support.hpp"

using namespace nldar;
using nldar::testing::make_step;

namespace {

// R -> E -> I1 -> I2, E highlightable, I1/I2 boolean.
Workflow small_workflow() {
  Workflow wf;
  wf.id = "small";
  wf.steps = {make_step("R", StepKind::read), make_step("E", StepKind::extract, AnswerSchema::text_with_highlights),
              make_step("I1", StepKind::infer, AnswerSchema::boolean_with_text),
              make_step("I2", StepKind::infer, AnswerSchema::boolean_with_text),
              make_step("F", StepKind::infer)};
  wf.edges = {{"R", "E"}, {"E", "I1"}, {"I1", "I2"}, {"E", "F"}};
  wf.inputs = {"R"};
  wf.components = {"E", "I1", "F"};
  wf.verdicts = {"I2"};
  return wf;
}

nlohmann::json four_block_doc(const std::string& id = "d1") {
  return {{"id", id},
          {"title", "t"},
          {"blocks",
           {{{"id", "p1"}, {"kind", "paragraph"}, {"text", "First paragraph."}},
            {{"id", "p2"}, {"kind", "paragraph"}, {"text", "Second paragraph."}},
            {{"id", "f1"}, {"kind", "figure"}, {"text", "Figure 1. A plot."}},
            {{"id", "p3"}, {"kind", "paragraph"}, {"text", "Third paragraph."}}}}};
}

class StoreTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = std::filesystem::temp_directory_path() /
            ("nldar-store-" + std::to_string(::getpid()) + "-" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(root_);
  }
  void TearDown() override { std::filesystem::remove_all(root_); }

  DocumentStore make() { return DocumentStore(root_, [] { return std::string("2024-01-01T00:00:00Z"); }); }

  Answer answer(const std::string& step, const std::string& text, std::optional<bool> b = std::nullopt) {
    Answer a;
    a.step = step;
    a.text = text;
    a.boolean = b;
    return a;
  }

  std::filesystem::path root_;
};

}  // namespace

TEST_F(StoreTest, IngestCountsBlocksAndIsIdempotent) {
  auto store = make();
  const auto doc = store.ingest_document(four_block_doc());
  EXPECT_EQ(doc.blocks.size(), 4U);
  const auto again = store.ingest_document(four_block_doc());
  EXPECT_EQ(again.id, doc.id);
  EXPECT_EQ(store.document_ids().size(), 1U);
}

TEST_F(StoreTest, IngestRejectsMissingCaptionAndConflicts) {
  auto store = make();
  auto bad = four_block_doc();
  bad["blocks"][2]["text"] = "";
  EXPECT_THROW(store.ingest_document(bad), ParseError);
  auto dup = four_block_doc();
  dup["blocks"][1]["id"] = "p1";
  EXPECT_THROW(store.ingest_document(dup), ParseError);
  store.ingest_document(four_block_doc());
  auto changed = four_block_doc();
  changed["blocks"][0]["text"] = "Different.";
  EXPECT_THROW(store.ingest_document(changed), Error);
}

TEST_F(StoreTest, DerivedIdIsContentBased) {
  auto store = make();
  auto raw = four_block_doc();
  raw.erase("id");
  const auto a = store.ingest_document(raw);
  const auto b = store.ingest_document(raw);
  EXPECT_EQ(a.id, b.id);
  EXPECT_EQ(a.id.rfind("doc-", 0), 0U);
}

TEST_F(StoreTest, SectionsFollowHeadings) {
  auto store = make();
  const auto doc = store.ingest_document_file(nldar::testing::asset("documents/sample_paper.json"));
  const auto results = doc.section("Results");
  EXPECT_EQ(doc.blocks[results.begin].text, "Results");
  EXPECT_EQ(doc.blocks[results.end].text, "Discussion");
  EXPECT_EQ(doc.section("*").end, doc.blocks.size());
}

TEST_F(StoreTest, RecordAnswerAndRevisionMarksDescendantsStale) {
  auto store = make();
  store.register_workflow(small_workflow());
  store.ingest_document(four_block_doc());
  auto rec = store.create_execution("small", "d1", "agent-a");

  rec = store.record_answer(rec.id, answer("R", "read"));
  EXPECT_EQ(rec.answers.size(), 1U);
  EXPECT_FALSE(rec.answers.at("R").stale);

  auto e = answer("E", "extracted");
  e.highlights.push_back({"", "p1", 0, 5});
  rec = store.record_answer(rec.id, e);
  rec = store.record_answer(rec.id, answer("I1", "yes", true));
  rec = store.record_answer(rec.id, answer("I2", "no", false));
  rec = store.record_answer(rec.id, answer("F", "free"));

  rec = store.record_answer(rec.id, answer("E", "extracted again"));
  EXPECT_TRUE(rec.answers.at("I1").stale);
  EXPECT_TRUE(rec.answers.at("I2").stale);
  EXPECT_TRUE(rec.answers.at("F").stale);
  EXPECT_FALSE(rec.answers.at("E").stale);
  EXPECT_FALSE(rec.answers.at("R").stale);
  EXPECT_EQ(rec.answers.at("E").revised, "2024-01-01T00:00:00Z");

  // Re-answering a stale step clears its flag.
  rec = store.record_answer(rec.id, answer("I1", "still yes", true));
  EXPECT_FALSE(rec.answers.at("I1").stale);
  EXPECT_TRUE(rec.answers.at("I2").stale);

  std::ifstream log(root_ / "documents" / "d1" / "executions" / (rec.id + ".log"));
  std::size_t lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  EXPECT_EQ(lines, 7U);
}

TEST_F(StoreTest, RecordAnswerErrors) {
  auto store = make();
  store.register_workflow(small_workflow());
  store.ingest_document(four_block_doc());
  auto rec = store.create_execution("small", "d1", "agent-a");
  EXPECT_THROW(store.record_answer(rec.id, answer("R", "x", true)), SchemaMismatch);
  EXPECT_THROW(store.record_answer("nope", answer("R", "x")), NotFound);
  EXPECT_THROW(store.record_answer(rec.id, answer("Z", "x")), NotFound);
  EXPECT_THROW(store.record_answer(rec.id, answer("E", "x")), Error);  // parent R unanswered
  store.record_answer(rec.id, answer("R", "x"));
  auto e = answer("E", "x");
  e.highlights.push_back({"", "p1", 3, 999});
  EXPECT_THROW(store.record_answer(rec.id, e), SchemaMismatch);
  auto f = answer("E", "x");
  f.highlights.push_back({"", "p1", 0, 3});
  store.record_answer(rec.id, f);
  auto i = answer("I1", "x");
  i.highlights.push_back({"", "p1", 0, 3});
  EXPECT_THROW(store.record_answer(rec.id, i), SchemaMismatch);
}

TEST(Majority, Votes) {
  EXPECT_EQ(majority({true, true, false}), Label::yes);
  EXPECT_EQ(majority({true, false}), Label::tie);
  EXPECT_EQ(majority({true, true, false, false, false}), Label::no);
  EXPECT_THROW(majority({}), NotFound);
}

TEST_F(StoreTest, MajorityLabelOverHumanExecutions) {
  auto store = make();
  store.register_workflow(small_workflow());
  store.ingest_document(four_block_doc());
  const std::vector<bool> votes{true, true, false};
  for (std::size_t k = 0; k < votes.size(); ++k) {
    auto rec = store.create_execution("small", "d1", "agent-" + std::to_string(k));
    store.record_answer(rec.id, answer("R", "r"));
    store.record_answer(rec.id, answer("E", "e"));
    auto i = answer("I1", "i", votes[k]);
    i.uncertain = k == 0;
    store.record_answer(rec.id, i);
  }
  EXPECT_EQ(store.majority_label("d1", "I1"), Label::yes);
  EXPECT_EQ(store.majority_label("d1", "I1", /*include_uncertain=*/false), Label::tie);
  EXPECT_THROW(store.majority_label("d1", "I2"), NotFound);
  EXPECT_THROW(store.majority_label("d1", "E"), SchemaMismatch);
  EXPECT_EQ(store.redundancy("d1", "I1"), 3U);
  EXPECT_EQ(store.redundancy("d1", "I2"), 0U);
}

TEST_F(StoreTest, ReloadIsIdentity) {
  ExecutionRecord before;
  Document doc_before;
  {
    auto store = make();
    store.register_workflow(small_workflow());
    doc_before = store.ingest_document_file(nldar::testing::asset("documents/sample_paper.json"));
    auto rec = store.create_execution("small", doc_before.id, "agent-a");
    store.record_answer(rec.id, answer("R", "r"));
    auto e = answer("E", "e");
    e.highlights.push_back({"", "b02", 0, 10});
    e.uncertain = true;
    before = store.record_answer(rec.id, e);
  }
  auto reopened = make();
  EXPECT_EQ(reopened.execution(before.id), before);
  EXPECT_EQ(to_json(reopened.document(doc_before.id)).dump(), to_json(doc_before).dump());
  EXPECT_EQ(to_json(*reopened.workflow("small")).dump(), to_json(small_workflow()).dump());
}

TEST_F(StoreTest, ExportUsesPseudonymsOnly) {
  auto store = make();
  store.register_workflow(small_workflow());
  store.ingest_document(four_block_doc());
  const auto p = store.pseudonym("Jane Realname");
  EXPECT_EQ(store.pseudonym("Jane Realname"), p);
  EXPECT_NE(store.pseudonym("Other Person"), p);
  auto rec = store.create_execution("small", "d1", p);
  store.record_answer(rec.id, answer("R", "r"));
  store.record_answer(rec.id, answer("E", "e"));
  std::ostringstream os;
  store.export_jsonl(os);
  EXPECT_EQ(os.str().find("Realname"), std::string::npos);
  EXPECT_NE(os.str().find(p), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(root_ / "private" / "pseudonyms.json"));

  // Export then import into a fresh store reproduces the answers.
  const auto other_root = root_.string() + "-import";
  std::filesystem::remove_all(other_root);
  {
    DocumentStore other(other_root);
    other.ingest_document(four_block_doc());
    std::istringstream is(os.str());
    EXPECT_EQ(other.import_jsonl(is), 1U);
    EXPECT_EQ(other.execution(rec.id).answers.at("E").text, "e");
  }
  std::filesystem::remove_all(other_root);
}

TEST_F(StoreTest, RedundancyMatchesExecutionCount) {
  auto store = make();
  store.register_workflow(small_workflow());
  store.ingest_document(four_block_doc());
  std::mt19937_64 rng(3);
  std::map<std::string, std::size_t> expected;
  for (int k = 0; k < 6; ++k) {
    auto rec = store.create_execution("small", "d1", "agent-" + std::to_string(k));
    const std::vector<std::string> prefix{"R", "E", "I1", "I2"};
    const auto depth = rng() % 5;
    for (std::size_t s = 0; s < depth; ++s) {
      store.record_answer(rec.id, answer(prefix[s], "x", s >= 2 ? std::optional<bool>(true) : std::nullopt));
      ++expected[prefix[s]];
    }
  }
  for (const auto& step : {"R", "E", "I1", "I2"}) EXPECT_EQ(store.redundancy("d1", step), expected[step]);
}

TEST_F(StoreTest, ConcurrentWritersOnDistinctExecutions) {
  auto store = make();
  store.register_workflow(small_workflow());
  store.ingest_document(four_block_doc());
  std::vector<std::string> ids;
  for (int k = 0; k < 8; ++k) ids.push_back(store.create_execution("small", "d1", "agent-" + std::to_string(k)).id);
  std::vector<std::thread> threads;
  for (const auto& id : ids)
    threads.emplace_back([&, id] {
      store.record_answer(id, answer("R", "r"));
      store.record_answer(id, answer("E", "e"));
      store.record_answer(id, answer("I1", "i", true));
    });
  for (auto& t : threads) t.join();
  for (const auto& id : ids) EXPECT_EQ(store.execution(id).answers.size(), 3U);
}
