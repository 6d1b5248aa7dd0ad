#pragma once

// Repository ingestion: source files, callable API units, per-task context,
// sliding code windows, oracle invoked-API sets and containment labels.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace alliance {

struct SourceFile {
  std::string path;  // repository-relative, '/' separated
  std::string text;
  std::size_t line_count = 0;
};

struct Diagnostic {
  std::string path;
  std::string message;
};

struct CorpusManifest {
  std::filesystem::path root;
  std::vector<SourceFile> files;  // sorted by path
  std::vector<Diagnostic> warnings;

  const SourceFile* find(std::string_view path) const;
  /// Digest over (path, text) of every file, in path order.
  std::string hash() const;
};

struct ScanOptions {
  std::vector<std::string> include_globs{"**/*.py"};
  std::vector<std::string> exclude_globs{"**/tests/**", "**/test_*.py", "**/*_test.py",
                                         "**/.*/**"};
};

/// `*` and `?` stay within a path segment; `**` spans segments. A leading
/// `**/` also matches zero segments.
bool glob_match(std::string_view pattern, std::string_view path);

CorpusManifest scan_repository(const std::filesystem::path& root, const ScanOptions& options = {});

struct LineSpan {
  int start = 0;  // 1-based, inclusive
  int end = 0;

  bool overlaps(const LineSpan& o) const { return start <= o.end && o.start <= end; }
  friend bool operator==(const LineSpan&, const LineSpan&) = default;
};

struct ApiUnit {
  std::string id;
  std::string qualified_name;
  std::string signature;
  std::optional<std::string> doc;
  std::string body;
  std::string path;
  LineSpan span;

  friend bool operator==(const ApiUnit&, const ApiUnit&) = default;
};

/// Dotted module path: "pkg/sub/mod.py" -> "pkg.sub.mod", "pkg/__init__.py" -> "pkg".
std::string module_name_for(std::string_view path);

std::string api_unit_id(std::string_view path, std::string_view qualified_name,
                        std::string_view signature);

struct ExtractResult {
  std::vector<ApiUnit> units;
  std::optional<Diagnostic> error;
};

/// Top-level functions and class methods in source order. Nested closures
/// are skipped. A file that fails to lex yields no units and a diagnostic.
ExtractResult extract_api_units(const SourceFile& file);

struct ApiTable {
  std::vector<ApiUnit> units;  // sorted by (path, span.start)
  std::vector<Diagnostic> errors;

  const ApiUnit* by_id(std::string_view id) const;
  const ApiUnit* by_qualified_name(std::string_view name) const;
};

ApiTable build_api_table(const CorpusManifest& manifest);

/// Lines [1, span.start - 1] of the target file, verbatim.
std::string extract_context(const CorpusManifest& manifest, std::string_view path,
                            const LineSpan& span);

struct CodeWindow {
  std::string path;
  int start_line = 0;
  int end_line = 0;
  std::string text;

  LineSpan span() const { return {start_line, end_line}; }
  std::string key() const;
};

std::vector<CodeWindow> chunk_windows(const SourceFile& file, int window_size, int stride);

/// Name-resolution context for call sites of a reference solution.
struct ResolutionScope {
  std::string module;           // dotted module of the target file
  std::string enclosing_class;  // fully qualified, empty for free functions
  std::map<std::string, std::string> imports;  // local alias -> dotted target
  std::string exclude_id;                      // the target's own unit
};

/// Collects `import` / `from ... import` bindings from a block of source.
std::map<std::string, std::string> collect_imports(std::string_view source,
                                                   std::string_view module);

struct InvokedApis {
  std::vector<std::string> ids;  // sorted, unique
  bool unparsable = false;
  std::string diagnostic;
};

InvokedApis extract_invoked_apis(std::string_view reference_solution,
                                 std::span<const ApiUnit> api_table,
                                 const ResolutionScope& scope = {});

enum class Containment { FullyContained, PartiallyContained, NotIncluded };

std::string_view to_string(Containment c);

struct ContainmentResult {
  Containment value = Containment::FullyContained;
  bool vacuous = false;  // empty oracle set; excluded from containment reports
};

ContainmentResult classify_containment(std::string_view context,
                                       std::span<const ApiUnit* const> oracle_apis);

struct TestSuite {
  std::vector<std::string> files;  // relative to the task directory
  std::vector<std::vector<std::string>> commands;
};

struct GenerationTask {
  std::string task_id;
  std::string query;
  std::string context_block;
  std::string target_path;
  LineSpan target_span;
  std::string reference_solution;
  std::filesystem::path task_dir;
  TestSuite test_suite;
  std::vector<std::string> oracle_apis;
  bool oracle_unparsable = false;
  std::string target_unit_id;  // empty when the target is not a known unit
};

/// Loads every task directory under `benchmark_dir` (sorted by name) and
/// resolves context and oracle APIs against the corpus.
std::vector<GenerationTask> load_tasks(const std::filesystem::path& benchmark_dir,
                                       const CorpusManifest& manifest, const ApiTable& table);

/// Re-indents a definition so its first non-blank line starts at `indent`
/// spaces, keeping relative indentation.
std::string reindent(std::string_view code, int indent);

// Line-delimited persistence. One JSON object per line.
nlohmann::json to_json(const SourceFile& f);
nlohmann::json to_json(const ApiUnit& u);
ApiUnit api_unit_from_json(const nlohmann::json& j);
SourceFile source_file_from_json(const nlohmann::json& j);

void write_manifest(const std::filesystem::path& file, const CorpusManifest& manifest);
CorpusManifest read_manifest(const std::filesystem::path& file);
void write_api_table(const std::filesystem::path& file, const ApiTable& table);
ApiTable read_api_table(const std::filesystem::path& file);

}  // namespace alliance
