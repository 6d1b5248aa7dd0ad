#pragma once

// Sandboxed execution of candidates, Pass@k and the analysis reports.

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "alliance/corpus.hpp"
#include "alliance/llm.hpp"

namespace alliance {

enum class VerdictStatus { Pass, TestFail, RuntimeError, Timeout, CandidateUnparsable };

std::string_view to_string(VerdictStatus s);
VerdictStatus verdict_status_from_string(std::string_view s);

struct TestResult {
  std::vector<std::string> command;
  VerdictStatus status = VerdictStatus::Pass;
  int exit_code = 0;
  double seconds = 0.0;
  std::string stderr_tail;
};

struct ExecutionVerdict {
  VerdictStatus status = VerdictStatus::Pass;
  std::vector<TestResult> tests;
  double wall_time = 0.0;
};

nlohmann::json to_json(const ExecutionVerdict& v);
ExecutionVerdict execution_verdict_from_json(const nlohmann::json& j);

struct SandboxConfig {
  std::filesystem::path corpus_root;
  std::chrono::milliseconds timeout{10000};  // per test command
  std::size_t memory_bytes = 512ull << 20;
  bool isolate_network = true;  // best effort
  std::filesystem::path work_root = std::filesystem::temp_directory_path();
};

/// Replaces lines [span.start, span.end] of `file_text` with `candidate`,
/// re-indented to the indentation of the first replaced line.
std::string splice_candidate(std::string_view file_text, const LineSpan& span, std::string_view candidate);

/// Copies the corpus, splices the candidate into the target, copies the
/// task's test files into the checkout root and runs every test command in a
/// fresh process group. A missing interpreter is an Environment error.
ExecutionVerdict execute_candidate(const std::optional<CodeCandidate>& candidate, const GenerationTask& task,
                                   const SandboxConfig& cfg);

/// sha256 over every regular file (path and bytes) under `root`.
std::string directory_hash(const std::filesystem::path& root);

enum class PassAtKMethod { Empirical, Estimator };

struct PassAtK {
  int k = 1;
  PassAtKMethod method = PassAtKMethod::Estimator;
  double value = 0.0;  // [0, 1]
};

/// 1 - C(n-c, k) / C(n, k) in product form.
PassAtK pass_at_k_estimator(int n, int c, int k);
/// 1 when any of the k verdicts passed.
PassAtK pass_at_k_empirical(std::span<const VerdictStatus> verdicts, int k);
/// Mean of task values as a percentage.
double dataset_percent(std::span<const double> task_values);

/// condition -> task -> verdict per sample, ordered by sample index.
using VerdictTable = std::map<std::string, std::map<std::string, std::vector<VerdictStatus>>>;

std::set<std::string> pass_set(const std::map<std::string, std::vector<VerdictStatus>>& tasks, int k);

struct IntersectionEntry {
  std::vector<std::string> conditions;
  std::set<std::string> tasks;
};

struct ContainmentSplit {
  Containment containment = Containment::FullyContained;
  std::set<std::string> total;
  std::set<std::string> cpass;  // passed with context alone
  std::set<std::string> bpass;  // passed by context alone and by context plus APIs

  double cpass_percent() const;  // of total
  double bpass_percent() const;  // of cpass
};

struct IntersectionReport {
  int k = 5;
  std::map<std::string, std::set<std::string>> pass_sets;
  std::vector<IntersectionEntry> intersections;  // every pair and triple of conditions
  std::set<std::string> excluded_trivial;        // passed by Pure
  std::vector<ContainmentSplit> containment;     // FullyContained, NotIncluded
};

struct ContainmentOptions {
  std::string context_condition = "Context";
  std::string combined_condition = "ConAPI";
  std::string trivial_condition = "Pure";
};

/// All conditions must cover the same tasks; a mismatch is an error naming the
/// symmetric difference. `containment` maps task id to its class; vacuous
/// tasks and tasks passed by the trivial condition are left out of the splits.
IntersectionReport intersection_report(const VerdictTable& runs,
                                       const std::map<std::string, ContainmentResult>& containment, int k = 5,
                                       const ContainmentOptions& opts = {});

const IntersectionEntry* find_intersection(const IntersectionReport& r, std::vector<std::string> conditions);

enum class CountClass { Higher, Equal, Lower };

CountClass classify_count(std::size_t predicted, std::size_t actual);

struct CountInput {
  std::string task_id;
  std::size_t predicted = 0;               // retrieved dedup set size
  std::optional<std::size_t> actual;       // oracle size; absent when unresolvable
};

struct CountComparisonReport {
  std::size_t higher = 0, equal = 0, lower = 0;
  std::size_t excluded = 0;  // missing or empty oracle sets

  std::size_t total() const { return higher + equal + lower; }
  double higher_percent() const;
  double equal_percent() const;
  double lower_percent() const;
};

CountComparisonReport api_count_comparison(std::span<const CountInput> tasks);

struct RecallInput {
  std::string task_id;
  std::set<std::string> oracle;
  std::set<std::string> retrieved;
  std::set<std::string> in_context;  // oracle APIs whose definitions appear in the context
  bool passed = false;               // by this run at the reporting k
  bool oracle_passed = false;        // by the ConAPI oracle run
};

struct RecallReport {
  double recall = 0.0;   // [0, 1]
  double brecall = 0.0;
  double crecall = 0.0;
  std::size_t tasks = 0;
  std::size_t both_pass_tasks = 0;
  std::size_t excluded = 0;
};

RecallReport recall_metrics(std::span<const RecallInput> tasks);

struct LengthSummary {
  std::size_t count = 0;
  double min = 0, median = 0, mean = 0, max = 0;
  bool empty() const { return count == 0; }
};

LengthSummary summarize_lengths(std::vector<double> values);

struct LengthReport {
  LengthSummary both_pass;
  LengthSummary api_only_pass;
  std::set<std::string> both_tasks;
  std::set<std::string> api_only_tasks;
};

/// Partitions tasks by the API and ConAPI pass sets and summarizes the prompt
/// token estimates recorded under `length_condition`.
LengthReport prompt_length_analysis(const std::map<std::string, std::size_t>& prompt_tokens,
                                    const std::set<std::string>& api_pass, const std::set<std::string>& conapi_pass);

// Plain-text renderers.
std::string format_count_percent(double v);  // 2 decimals at or above 10, else 1
std::string format_fraction(std::size_t part, std::size_t whole);  // "30 (28.0%)"
std::string render_containment_row(const ContainmentSplit& s);
std::string render_count_row(const CountComparisonReport& r);
std::string render_recall_row(const RecallReport& r);

struct PassAtKRow {
  std::string name;
  std::map<int, double> estimator;  // k -> percent
  std::map<int, double> empirical;
};

/// Rows sorted as given; the best value per column is marked with '*'.
std::string render_pass_at_k_table(std::span<const PassAtKRow> rows, std::span<const int> ks);
std::string render_intersection(const IntersectionReport& r);
std::string render_length_report(const LengthReport& r);

}  // namespace alliance
