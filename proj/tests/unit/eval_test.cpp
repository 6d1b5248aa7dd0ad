#include <gtest/gtest.h>

#include <cmath>
#include <bit>
#include <filesystem>

#include <fmt/format.h>

#include "alliance/error.hpp"
#include "alliance/eval.hpp"
#include "alliance/jsonl.hpp"

using namespace alliance;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = ALLIANCE_FIXTURES;

// Brute force: fraction of k-subsets of n samples (c correct) holding a correct one.
double enumerate_pass_at_k(int n, int c, int k) {
  int hit = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    ++total;
    if ((mask & ((1u << c) - 1)) != 0) ++hit;
  }
  return static_cast<double>(hit) / total;
}

std::vector<VerdictStatus> verdicts(std::initializer_list<int> passes) {
  std::vector<VerdictStatus> out;
  for (int p : passes) out.push_back(p ? VerdictStatus::Pass : VerdictStatus::TestFail);
  return out;
}

struct Bench {
  CorpusManifest manifest = scan_repository(kFixtures / "repo");
  ApiTable table = build_api_table(manifest);
  std::vector<GenerationTask> tasks = load_tasks(kFixtures / "bench", manifest, table);
  SandboxConfig cfg;
  Bench() {
    cfg.corpus_root = kFixtures / "repo";
    cfg.timeout = std::chrono::milliseconds(2000);
  }
};

CodeCandidate candidate_from(const fs::path& p) { return {read_file(p), ExtractionMethod::FencedBlock}; }

}  // namespace

TEST(PassAtK, EstimatorMatchesEnumeration) {
  for (int n = 1; n <= 8; ++n) {
    for (int c = 0; c <= n; ++c) {
      for (int k = 1; k <= n; ++k) {
        EXPECT_NEAR(pass_at_k_estimator(n, c, k).value, enumerate_pass_at_k(n, c, k), 1e-12)
            << n << " " << c << " " << k;
      }
    }
  }
}

TEST(PassAtK, KnownValues) {
  EXPECT_NEAR(pass_at_k_estimator(5, 2, 1).value, 0.4, 1e-12);
  EXPECT_NEAR(pass_at_k_estimator(10, 3, 5).value, 11.0 / 12.0, 1e-12);
  EXPECT_EQ(pass_at_k_estimator(5, 0, 3).value, 0.0);
  EXPECT_EQ(pass_at_k_estimator(5, 3, 3).value, 1.0);
  EXPECT_THROW(pass_at_k_estimator(3, 4, 1), Error);
  EXPECT_THROW(pass_at_k_estimator(3, 1, 4), Error);
}

TEST(PassAtK, EmpiricalDatasetPercent) {
  std::vector<std::vector<VerdictStatus>> runs = {verdicts({0, 1}), verdicts({0, 0}), verdicts({1, 1}),
                                                  verdicts({1, 0})};
  std::vector<double> values;
  for (const auto& r : runs) values.push_back(pass_at_k_empirical(r, 2).value);
  EXPECT_EQ(values, (std::vector<double>{1, 0, 1, 1}));
  EXPECT_EQ(fmt::format("{:.2f}", dataset_percent(values)), "75.00");
  EXPECT_THROW(pass_at_k_empirical(verdicts({1}), 2), Error);
}

TEST(PassSet, UsesFirstKSamples) {
  std::map<std::string, std::vector<VerdictStatus>> tasks = {{"a", verdicts({0, 0, 1})}, {"b", verdicts({1, 0, 0})}};
  EXPECT_EQ(pass_set(tasks, 2), (std::set<std::string>{"b"}));
  EXPECT_EQ(pass_set(tasks, 3), (std::set<std::string>{"a", "b"}));
}

TEST(Intersection, TripleAndPairs) {
  VerdictTable runs;
  runs["Context"] = {{"1", verdicts({1})}, {"2", verdicts({1})}, {"3", verdicts({0})}};
  runs["API"] = {{"1", verdicts({0})}, {"2", verdicts({1})}, {"3", verdicts({1})}};
  runs["ConAPI"] = {{"1", verdicts({1})}, {"2", verdicts({1})}, {"3", verdicts({1})}};
  auto r = intersection_report(runs, {}, 1);
  const auto* triple = find_intersection(r, {"ConAPI", "Context", "API"});
  ASSERT_NE(triple, nullptr);
  EXPECT_EQ(triple->tasks, (std::set<std::string>{"2"}));
  EXPECT_EQ(find_intersection(r, {"Context", "ConAPI"})->tasks, (std::set<std::string>{"1", "2"}));
  EXPECT_NE(render_intersection(r).find("Context & API & ConAPI: 1 [2]"), std::string::npos);
}

TEST(Intersection, TaskMismatchNamesDifference) {
  VerdictTable runs;
  runs["API"] = {{"1", verdicts({1})}, {"2", verdicts({1})}};
  runs["Context"] = {{"1", verdicts({1})}, {"9", verdicts({1})}};
  try {
    intersection_report(runs, {}, 1);
    FAIL();
  } catch (const Error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("2, 9"), std::string::npos) << msg;
  }
}

TEST(Intersection, ContainmentSplitsExcludeTrivialAndVacuous) {
  VerdictTable runs;
  std::map<std::string, ContainmentResult> cls;
  // 10 fully contained tasks: 6 pass with context, 3 of those also with ConAPI; one passed by Pure.
  for (int i = 0; i < 11; ++i) {
    std::string id = fmt::format("f{:02}", i);
    runs["Context"][id] = verdicts({i < 6 || i == 10});
    runs["ConAPI"][id] = verdicts({i < 3 || i == 10});
    runs["Pure"][id] = verdicts({i == 10});
    cls[id] = {Containment::FullyContained, false};
  }
  runs["Context"]["v"] = verdicts({1});
  runs["ConAPI"]["v"] = verdicts({1});
  runs["Pure"]["v"] = verdicts({0});
  cls["v"] = {Containment::NotIncluded, true};
  auto r = intersection_report(runs, cls, 1);
  ASSERT_EQ(r.containment.size(), 2u);
  const auto& full = r.containment[0];
  EXPECT_EQ(full.total.size(), 10u);
  EXPECT_EQ(render_containment_row(full), "6 (60.0%) / 3 (50.0%)");
  EXPECT_TRUE(r.containment[1].total.empty());
  EXPECT_EQ(r.excluded_trivial, (std::set<std::string>{"f10"}));
}

TEST(Report, FractionFormatting) {
  EXPECT_EQ(format_fraction(30, 107), "30 (28.0%)");
  EXPECT_EQ(format_fraction(18, 30), "18 (60.0%)");
  EXPECT_EQ(format_fraction(0, 0), "0 (0.0%)");
}

TEST(Report, CountRowShape) {
  std::vector<CountInput> in;
  int n = 0;
  auto add = [&](int count, std::size_t predicted, std::size_t actual) {
    for (int i = 0; i < count; ++i) in.push_back({fmt::format("t{}", n++), predicted, actual});
  };
  add(204, 5, 2);
  add(19, 2, 2);
  add(51, 1, 3);
  in.push_back({"none", 3, std::nullopt});
  in.push_back({"empty", 3, 0});
  auto r = api_count_comparison(in);
  EXPECT_EQ(r.excluded, 2u);
  EXPECT_EQ(render_count_row(r), "74.45 / 6.9 / 18.61");
}

TEST(Recall, SmallFixture) {
  std::vector<RecallInput> in = {{"t", {"a", "b", "c"}, {"a"}, {"b"}, true, true}};
  auto r = recall_metrics(in);
  EXPECT_NEAR(r.recall, 1.0 / 3, 1e-12);
  EXPECT_NEAR(r.crecall, 2.0 / 3, 1e-12);
  EXPECT_NEAR(r.brecall, 1.0 / 3, 1e-12);
  std::vector<RecallInput> vacuous = {{"v", {}, {"a"}, {}, true, true}};
  EXPECT_EQ(recall_metrics(vacuous).excluded, 1u);
  EXPECT_EQ(recall_metrics(vacuous).tasks, 0u);
}

TEST(Recall, RowFormatting) {
  RecallReport r;
  r.recall = 0.2038;
  r.brecall = 0.2133;
  r.crecall = 0.2923;
  EXPECT_EQ(render_recall_row(r), "20.38 / 21.33 / 29.23");
}

TEST(PromptLength, PartitionMeans) {
  std::map<std::string, std::size_t> tokens = {{"a", 50}, {"b", 150}, {"c", 900}, {"d", 1100}};
  auto r = prompt_length_analysis(tokens, {"a", "b", "c", "d"}, {"a", "b"});
  EXPECT_DOUBLE_EQ(r.both_pass.mean, 100.0);
  EXPECT_DOUBLE_EQ(r.api_only_pass.mean, 1000.0);
  EXPECT_EQ(r.both_pass.count, 2u);
  auto empty = prompt_length_analysis(tokens, {}, {});
  EXPECT_TRUE(empty.both_pass.empty());
  EXPECT_NE(render_length_report(empty).find("empty"), std::string::npos);
}

TEST(PassAtKTable, MarksBestPerColumn) {
  std::vector<PassAtKRow> rows = {{"Pure", {{1, 10.0}}, {{1, 12.0}}}, {"Context", {{1, 20.0}}, {{1, 5.0}}}};
  std::vector<int> ks = {1};
  std::string t = render_pass_at_k_table(rows, ks);
  EXPECT_NE(t.find("20.00*"), std::string::npos);
  EXPECT_NE(t.find("12.00*"), std::string::npos);
  EXPECT_EQ(t.find("10.00*"), std::string::npos);
}

TEST(Splice, ReindentsToSpan) {
  std::string file = "class A:\n    def f(self):\n        return 1\n\n    def g(self):\n        return 2\n";
  std::string out = splice_candidate(file, {2, 3}, "def f(self):\n    return 42\n");
  EXPECT_EQ(out, "class A:\n    def f(self):\n        return 42\n\n    def g(self):\n        return 2\n");
  EXPECT_THROW(splice_candidate(file, {5, 9}, "x"), Error);
}

TEST(Verdict, JsonRoundTrip) {
  ExecutionVerdict v;
  v.status = VerdictStatus::TestFail;
  v.tests.push_back({{"python3", "x.py"}, VerdictStatus::TestFail, 1, 0.25, "AssertionError"});
  v.wall_time = 0.5;
  auto back = execution_verdict_from_json(to_json(v));
  EXPECT_EQ(to_json(back), to_json(v));
}

TEST(Sandbox, ReferenceSolutionsPass) {
  Bench b;
  ASSERT_EQ(b.tasks.size(), 3u);
  std::string before = directory_hash(b.cfg.corpus_root);
  for (const auto& t : b.tasks) {
    auto v = execute_candidate(CodeCandidate{t.reference_solution, ExtractionMethod::FencedBlock}, t, b.cfg);
    EXPECT_EQ(v.status, VerdictStatus::Pass) << t.task_id << ": " << (v.tests.empty() ? "" : v.tests[0].stderr_tail);
  }
  EXPECT_EQ(directory_hash(b.cfg.corpus_root), before);
}

TEST(Sandbox, MutantsFailTests) {
  Bench b;
  std::string before = directory_hash(b.cfg.corpus_root);
  for (const auto& t : b.tasks) {
    auto v = execute_candidate(candidate_from(kFixtures / "mutants" / (t.task_id + ".py")), t, b.cfg);
    EXPECT_EQ(v.status, VerdictStatus::TestFail) << t.task_id << ": " << (v.tests.empty() ? "" : v.tests[0].stderr_tail);
  }
  EXPECT_EQ(directory_hash(b.cfg.corpus_root), before);
}

TEST(Sandbox, InfiniteLoopTimesOut) {
  Bench b;
  b.cfg.timeout = std::chrono::milliseconds(500);
  auto start = std::chrono::steady_clock::now();
  auto v = execute_candidate(candidate_from(kFixtures / "mutants" / "loop.py"), b.tasks[0], b.cfg);
  EXPECT_EQ(v.status, VerdictStatus::Timeout);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(5));
}

TEST(Sandbox, RuntimeErrorAndUnparsable) {
  Bench b;
  auto v = execute_candidate(CodeCandidate{"def load_entries(path):\n    raise KeyError(path)\n",
                                           ExtractionMethod::FencedBlock},
                             b.tasks[0], b.cfg);
  EXPECT_EQ(v.status, VerdictStatus::RuntimeError);
  EXPECT_EQ(execute_candidate(std::nullopt, b.tasks[0], b.cfg).status, VerdictStatus::CandidateUnparsable);
}

TEST(Sandbox, MissingInterpreterIsEnvironmentError) {
  Bench b;
  GenerationTask t = b.tasks[0];
  t.test_suite.commands = {{"no-such-python-xyz", "test_t1.py"}};
  try {
    execute_candidate(CodeCandidate{t.reference_solution, ExtractionMethod::FencedBlock}, t, b.cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Environment);
  }
}

TEST(DirectoryHash, DetectsChanges) {
  fs::path d = fs::temp_directory_path() / "alliance-hash-test";
  fs::remove_all(d);
  fs::create_directories(d / "sub");
  write_file_atomic(d / "sub" / "a.txt", "one");
  std::string h1 = directory_hash(d);
  EXPECT_EQ(directory_hash(d), h1);
  write_file_atomic(d / "sub" / "a.txt", "two");
  EXPECT_NE(directory_hash(d), h1);
  fs::remove_all(d);
}
