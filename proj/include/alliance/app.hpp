#pragma once

// Command-line entry point: index, generate, eval, report and cache.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "alliance/config.hpp"
#include "alliance/eval.hpp"
#include "alliance/pipeline.hpp"

namespace alliance {

/// Exit codes: 0 success, 1 fatal error, 2 config error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Run directory layout.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path index_dir() const { return root / "index"; }
  std::filesystem::path index_state() const { return index_dir() / "state.json"; }
  std::filesystem::path records_dir() const { return root / "records"; }
  std::filesystem::path verdicts_dir() const { return root / "verdicts"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }
  std::filesystem::path cache_delta() const { return root / "cache_delta.jsonl"; }
  std::filesystem::path records_file(const std::string& condition, const std::string& task) const {
    return records_dir() / condition / (task + ".jsonl");
  }
  std::filesystem::path verdicts_file(const std::string& condition, const std::string& task) const {
    return verdicts_dir() / condition / (task + ".jsonl");
  }
};

/// Loads what `index` persisted under <run_dir>/index.
RepositoryIndex load_repository_index(const RunPaths& paths, int window_size, int stride);
CorpusManifest load_indexed_manifest(const RunPaths& paths);

/// condition -> task -> records ordered by sample index.
std::map<std::string, std::map<std::string, std::vector<GenerationRecord>>> load_records(const RunPaths& paths);
VerdictTable load_verdicts(const RunPaths& paths);

}  // namespace alliance
