#pragma once

// Run configuration, run manifest and the run directory lock.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "alliance/llm.hpp"

namespace alliance {

// Environment variables. Secrets and endpoints only; everything else lives in
// the config file.
inline constexpr const char* kEnvLlmBaseUrl = "ALLIANCE_LLM_BASE_URL";
inline constexpr const char* kEnvLlmApiKey = "ALLIANCE_LLM_API_KEY";
inline constexpr const char* kEnvEmbedBaseUrl = "ALLIANCE_EMBED_BASE_URL";
inline constexpr const char* kEnvEmbedApiKey = "ALLIANCE_EMBED_API_KEY";

struct LlmConfig {
  std::string provider = "openai";  // openai | scripted
  std::string model = "gpt-4o-mini";
  std::string script;               // scripted provider rules file
  int max_tokens = 1024;
  int max_in_flight = 4;

  friend bool operator==(const LlmConfig&, const LlmConfig&) = default;
};

struct EmbeddingConfig {
  std::string provider = "hash";  // hash | http
  std::string model;              // http only
  int dim = 256;
  std::uint64_t seed = 0x5eed;    // hash only

  friend bool operator==(const EmbeddingConfig&, const EmbeddingConfig&) = default;
};

struct PathsConfig {
  std::string corpus_root;
  std::string benchmark_dir;
  std::string run_dir;
  std::string cache;  // replay cache; defaults to <run_dir>/cache.jsonl

  friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

struct SandboxLimits {
  int timeout_ms = 10000;
  int memory_mb = 512;
  bool isolate_network = true;
  int workers = 4;

  friend bool operator==(const SandboxLimits&, const SandboxLimits&) = default;
};

struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  GatewayMode mode = GatewayMode::Live;
  LlmConfig llm;
  EmbeddingConfig embedding;
  double temperature = 0.7;
  int k_samples = 5;
  int top_k_similar = 5;
  int window_size = 20;
  int stride = 10;
  int token_budget = 16000;
  std::string api_source = "text_description";  // text_description | raw_code
  std::vector<std::string> conditions{"AllianceCoder"};
  std::string step_examples;      // optional JSONL override
  std::string api_desc_examples;  // optional JSONL override
  std::vector<std::string> include_globs{"**/*.py"};
  std::vector<std::string> exclude_globs{"**/tests/**", "**/test_*.py", "**/*_test.py", "**/.*/**"};
  PathsConfig paths;
  SandboxLimits sandbox;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  std::filesystem::path cache_path() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Unknown keys and out-of-range values are Config errors.
RunConfig run_config_from_json(const nlohmann::json& j);
std::string render_config(const RunConfig& c);
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& file);

/// "all" -> nine names, "all8" -> the study conditions; otherwise validated names.
std::vector<std::string> expand_conditions(const std::vector<std::string>& names);

/// Checks the cross-field invariants; `need_corpus` etc. name what the command uses.
void validate_config(const RunConfig& c, bool need_corpus, bool need_bench);

struct CommandEntry {
  std::string command;
  std::string started_at;
  std::string finished_at;
  std::map<std::string, std::size_t> counters;
  bool ok = false;
};

struct RunManifest {
  nlohmann::json config;
  std::map<std::string, std::string> template_versions;
  std::string corpus_hash;
  std::vector<CommandEntry> commands;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const nlohmann::json& j);

std::string utc_timestamp();

/// Exclusive advisory lock on <run_dir>/.lock for the life of the object.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace alliance
