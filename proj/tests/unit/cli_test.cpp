#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <fmt/format.h>

#include "alliance/app.hpp"
#include "alliance/error.hpp"
#include "alliance/jsonl.hpp"

using namespace alliance;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = ALLIANCE_FIXTURES;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class RunDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / fmt::format("alliance-cli-{}-{}", ::getpid(),
                                                  ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    ::unsetenv(kEnvLlmApiKey);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::vector<std::string> replay(std::vector<std::string> args, const fs::path& run = {}) const {
    std::vector<std::string> common = {"--run-dir", (run.empty() ? dir : run).string(),
                                       "--corpus", (kFixtures / "repo").string(),
                                       "--bench", (kFixtures / "bench").string(),
                                       "--mode", "replay",
                                       "--cache", (kFixtures / "transcript.jsonl").string()};
    args.insert(args.end(), common.begin(), common.end());
    return args;
  }

  fs::path dir;
};

std::size_t count_lines(const fs::path& f) { return fs::exists(f) ? read_jsonl(f).size() : 0; }

}  // namespace

TEST(RunConfig, DefaultsMatchTheStudySetup) {
  RunConfig c;
  EXPECT_DOUBLE_EQ(c.temperature, 0.7);
  EXPECT_EQ(c.k_samples, 5);
  EXPECT_EQ(c.top_k_similar, 5);
  EXPECT_EQ(c.window_size, 20);
  EXPECT_EQ(c.stride, 10);
  EXPECT_EQ(c.sandbox.timeout_ms, 10000);
  EXPECT_EQ(c.sandbox.memory_mb, 512);
}

TEST(RunConfig, RenderParseRoundTrip) {
  RunConfig c;
  c.mode = GatewayMode::Record;
  c.llm.provider = "scripted";
  c.llm.script = "rules.json";
  c.temperature = 0.35;
  c.k_samples = 3;
  c.conditions = {"all8", "AllianceCoder"};
  c.paths = {"repo", "bench", "runs/a", "cache.jsonl"};
  c.sandbox.isolate_network = false;
  c.exclude_globs = {"**/vendor/**"};
  EXPECT_EQ(parse_config(render_config(c)), c);
  EXPECT_EQ(parse_config(render_config(RunConfig{})), RunConfig{});
  EXPECT_EQ(parse_config("{}"), RunConfig{});
}

TEST(RunConfig, RejectsBadInput) {
  auto kind = [](std::string_view text) {
    try {
      parse_config(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Precondition;
  };
  EXPECT_EQ(kind(R"({"tempurature": 0.5})"), ErrorKind::Config);
  EXPECT_EQ(kind(R"({"llm": {"modle": "x"}})"), ErrorKind::Config);
  EXPECT_EQ(kind(R"({"schema_version": 2})"), ErrorKind::Config);
  EXPECT_EQ(kind(R"({"k_samples": 0})"), ErrorKind::Config);
  EXPECT_EQ(kind(R"({"conditions": ["Nope"]})"), ErrorKind::Config);
  EXPECT_EQ(kind(R"({"mode": "offline"})"), ErrorKind::Config);
  EXPECT_EQ(kind(R"({"k_samples": "five"})"), ErrorKind::Config);
  EXPECT_EQ(kind("not json"), ErrorKind::Config);
}

TEST(RunConfig, ConditionShortcuts) {
  EXPECT_EQ(expand_conditions({"all8"}).size(), 8u);
  EXPECT_EQ(expand_conditions({"all"}).size(), 9u);
  EXPECT_EQ(expand_conditions({"ConAPI", "ConAPI"}), std::vector<std::string>{"ConAPI"});
}

TEST(Cli, HelpListsEnvironmentVariables) {
  auto r = cli({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* v : {kEnvLlmBaseUrl, kEnvLlmApiKey, kEnvEmbedBaseUrl, kEnvEmbedApiKey}) {
    EXPECT_NE(r.out.find(v), std::string::npos) << v;
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"generate", "-k", "many"}).code, 2);
}

TEST_F(RunDir, ReplayWithoutCacheIsConfigError) {
  auto r = cli({"index", "--run-dir", dir.string(), "--corpus", (kFixtures / "repo").string(), "--mode", "replay",
                "--cache", (dir / "missing.jsonl").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.jsonl"), std::string::npos);
}

TEST_F(RunDir, LiveWithoutKeyNamesTheVariable) {
  auto r = cli({"index", "--run-dir", dir.string(), "--corpus", (kFixtures / "repo").string(), "--mode", "live"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(kEnvLlmApiKey), std::string::npos) << r.err;
}

TEST_F(RunDir, IndexIsIdempotent) {
  auto first = cli(replay({"index"}));
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.out.find("12 API units, 12 descriptions"), std::string::npos) << first.out;
  EXPECT_EQ(count_lines(dir / "index" / "api_units.jsonl"), 12u);
  EXPECT_EQ(count_lines(dir / "index" / "descriptions.jsonl"), 12u);
  auto second = cli(replay({"index"}));
  ASSERT_EQ(second.code, 0);
  EXPECT_NE(second.out.find("up to date"), std::string::npos);
  auto manifest = json::parse(read_file(dir / "manifest.json"));
  ASSERT_EQ(manifest["commands"].size(), 2u);
  EXPECT_EQ(manifest["commands"][1]["counters"].value("llm_calls", 0), 0);
  EXPECT_EQ(manifest["commands"][1]["counters"].value("cache_hits", 0), 0);
  EXPECT_FALSE(manifest["corpus_hash"].get<std::string>().empty());
}

TEST_F(RunDir, GenerateCountsAndResumes) {
  ASSERT_EQ(cli(replay({"index"})).code, 0);
  auto r = cli(replay({"generate", "--condition", "AllianceCoder", "--task", "t1", "-k", "5"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "records" / "AllianceCoder" / "t1.jsonl"), 5u);
  auto again = cli(replay({"generate", "--condition", "AllianceCoder", "--task", "t1", "-k", "5"}));
  EXPECT_NE(again.out.find("up to date"), std::string::npos);
  EXPECT_EQ(count_lines(dir / "records" / "AllianceCoder" / "t1.jsonl"), 5u);

  auto oracle = cli(replay({"generate", "--condition", "ConAPI", "--task", "t1"}));
  ASSERT_EQ(oracle.code, 0);
  auto rec = generation_record_from_json(read_jsonl(dir / "records" / "ConAPI" / "t1.jsonl").front());
  EXPECT_EQ(rec.prompt.signature(), "api(oracle)+context+query");
}

TEST_F(RunDir, StudyMatrixWritesEightTimesK) {
  ASSERT_EQ(cli(replay({"index"})).code, 0);
  ASSERT_EQ(cli(replay({"generate", "--condition", "all8", "--task", "t2", "-k", "2"})).code, 0);
  std::size_t total = 0;
  for (const auto& c : study_conditions()) total += count_lines(dir / "records" / c.name / "t2.jsonl");
  EXPECT_EQ(total, 8u * 2u);
  EXPECT_FALSE(fs::exists(dir / "records" / "AllianceCoder"));
}

TEST_F(RunDir, UnknownTaskListsAvailable) {
  ASSERT_EQ(cli(replay({"index"})).code, 0);
  auto r = cli(replay({"generate", "--task", "t9"}));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("t1, t2, t3"), std::string::npos) << r.err;
}

TEST_F(RunDir, GenerateBeforeIndexIsFatal) {
  EXPECT_EQ(cli(replay({"generate"})).code, 1);
}

TEST_F(RunDir, EvalOnEmptyRunDirIsFatal) {
  ASSERT_EQ(cli(replay({"index"})).code, 0);
  auto r = cli(replay({"eval"}));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no generation records"), std::string::npos);
}

TEST_F(RunDir, EvalAndReportAcrossRuns) {
  fs::path other = dir / "other";
  for (const fs::path& run : {dir / "one", other}) {
    ASSERT_EQ(cli(replay({"index"}, run)).code, 0);
  }
  ASSERT_EQ(cli(replay({"generate", "--condition", "Context", "--task", "t1", "-k", "3"}, dir / "one")).code, 0);
  ASSERT_EQ(cli(replay({"generate", "--condition", "API", "--task", "t1", "--task", "t3", "-k", "3"}, other)).code, 0);
  auto e1 = cli(replay({"eval", "--report", "tables"}, dir / "one"));
  ASSERT_EQ(e1.code, 0) << e1.err;
  EXPECT_NE(e1.out.find("Pass@1"), std::string::npos);
  EXPECT_NE(e1.out.find("Pass@3"), std::string::npos);
  EXPECT_EQ(e1.out.find("Pass@5"), std::string::npos);
  EXPECT_EQ(count_lines(dir / "one" / "verdicts" / "Context" / "t1.jsonl"), 3u);
  ASSERT_EQ(cli(replay({"eval", "--report", "none"}, other)).code, 0);
  auto again = cli(replay({"eval", "--report", "none"}, dir / "one"));
  EXPECT_NE(again.out.find("0 candidates executed, 3 already evaluated"), std::string::npos) << again.out;

  auto single = cli({"report", (dir / "one").string()});
  ASSERT_EQ(single.code, 0);
  EXPECT_NE(single.out.find("Context"), std::string::npos);

  auto both = cli({"report", (dir / "one").string(), other.string()});
  ASSERT_EQ(both.code, 0) << both.err;
  EXPECT_NE(both.err.find("warning"), std::string::npos);
  EXPECT_NE(both.out.find("one/Context"), std::string::npos);
  EXPECT_NE(both.out.find("other/API"), std::string::npos);
  EXPECT_NE(both.out.find('*'), std::string::npos);

  EXPECT_EQ(cli({"report", (dir / "missing").string()}).code, 1);
}

TEST_F(RunDir, LockRejectsSecondProcess) {
  RunLock held(dir);
  auto r = cli(replay({"index"}));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("in use"), std::string::npos);
}

TEST_F(RunDir, CacheInspectAndExport) {
  auto r = cli({"cache", "inspect", "--cache", (kFixtures / "transcript.jsonl").string()});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("api_describe"), std::string::npos);
  fs::create_directories(dir);
  auto e = cli({"cache", "export", "--cache", (kFixtures / "transcript.jsonl").string(), "--stage", "api_describe",
                "--out", (dir / "describe.jsonl").string()});
  ASSERT_EQ(e.code, 0);
  EXPECT_EQ(count_lines(dir / "describe.jsonl"), 12u);
  EXPECT_EQ(cli({"cache", "inspect", "--cache", (dir / "nope.jsonl").string()}).code, 2);
}

TEST(Transcript, RecordedDescriptionForParseConfig) {
  ReplayCache cache(kFixtures / "transcript.jsonl");
  Gateway gateway(GatewayMode::Replay, nullptr, std::make_shared<ReplayCache>(kFixtures / "transcript.jsonl"));
  CorpusManifest m = scan_repository(kFixtures / "repo");
  ApiTable table = build_api_table(m);
  HashProjectionEmbedder embedder;
  auto descs = describe_repository_apis(table, gateway, embedder, PipelineOptions{});
  const ApiUnit* u = table.by_qualified_name("mini_repo.utils.parse_config");
  ASSERT_NE(u, nullptr);
  auto it = std::find_if(descs.begin(), descs.end(), [&](const auto& d) { return d.api_id == u->id; });
  ASSERT_NE(it, descs.end());
  EXPECT_EQ(it->text, "Parse configuration text of key = value lines into a dictionary of entries.");
  EXPECT_FALSE(it->degraded);
  EXPECT_EQ(gateway.cache_hits(), 12u);
}
