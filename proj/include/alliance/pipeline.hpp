#pragma once

// AllianceCoder stages, the condition matrix and prompt assembly.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "alliance/corpus.hpp"
#include "alliance/llm.hpp"
#include "alliance/retrieval.hpp"

namespace alliance {

struct ImplementationStep {
  int index = 0;  // 1-based
  std::string text;

  friend bool operator==(const ImplementationStep&, const ImplementationStep&) = default;
};

enum class ApiSource { Oracle, Predicted };

struct Condition {
  std::string name;
  bool use_context = false;
  bool use_similar = false;
  bool use_api = false;
  ApiSource api_source = ApiSource::Oracle;
};

/// The eight study conditions followed by AllianceCoder.
const std::vector<Condition>& all_conditions();
std::span<const Condition> study_conditions();
const Condition& condition_by_name(std::string_view name);

enum class BlockKind { Api, Similar, Context, Query };

std::string_view to_string(BlockKind kind);

struct PromptBlock {
  BlockKind kind = BlockKind::Query;
  std::string label;  // kind plus api source, e.g. "api(oracle)"
  std::string text;
  std::vector<std::string> items;  // api ids or window keys, in rendering order
  bool truncated = false;

  friend bool operator==(const PromptBlock&, const PromptBlock&) = default;
};

struct PromptBundle {
  std::vector<PromptBlock> blocks;
  std::size_t token_estimate = 0;

  std::string text() const;
  /// Block labels joined by '+', e.g. "api(oracle)+context+query".
  std::string signature() const;
  const PromptBlock* find(BlockKind kind) const;

  friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

/// Blocks in the order api, similar, context, query. `apis` and `similar`
/// must be supplied exactly when the condition uses them. An empty API list
/// omits the API block; an empty similar list keeps an empty similar block.
/// Over `token_budget`, API bodies are dropped first (last unit first), then
/// similar windows from the lowest ranked.
PromptBundle assemble_prompt(const Condition& condition, const GenerationTask& task,
                             std::optional<std::span<const ApiUnit>> apis,
                             std::optional<std::span<const SimilarWindow>> similar,
                             std::size_t token_budget = 0);

struct PipelineOptions {
  std::string model = "gpt-4o-mini";
  double temperature = 0.7;
  int max_tokens = 1024;
  int k_samples = 5;
  std::size_t top_k_similar = 5;
  std::size_t token_budget = 16000;  // 0 disables truncation
  std::vector<PromptExample> step_examples = default_examples(StageTag::Steps);
  std::vector<PromptExample> api_desc_examples = default_examples(StageTag::ApiDescs);
};

ChatRequest make_request(StageTag stage, std::vector<ChatMessage> messages, const PipelineOptions& opts,
                         int sample_index = 0);

/// One description per unit, embedded. A unit whose LLM call fails falls
/// back to its docstring (or name and signature) and is flagged degraded.
std::vector<ApiDescription> describe_repository_apis(const ApiTable& table, Gateway& gateway,
                                                     EmbeddingProvider& embedder, const PipelineOptions& opts);

std::vector<ImplementationStep> parse_steps(std::string_view completion);

struct StepsResult {
  std::vector<ImplementationStep> steps;
  bool degraded = false;
};

/// One retry with a stricter format reminder; then the whole query becomes
/// the single step.
StepsResult generate_steps(std::string_view query, Gateway& gateway, const PipelineOptions& opts);

std::string render_steps(std::span<const ImplementationStep> steps);

/// Lines "<step>: <description>" or "<step>: NONE".
std::vector<ApiDescription> parse_api_descriptions(std::string_view completion, int step_count);
std::vector<ApiDescription> generate_api_descriptions(std::span<const ImplementationStep> steps, Gateway& gateway,
                                                      const PipelineOptions& opts);

/// Originals (exact duplicates removed) followed by new bullet texts, which
/// carry stage extended. Unparsable output returns the originals.
std::vector<ApiDescription> extend_api_descriptions(std::span<const ApiDescription> descs, Gateway& gateway,
                                                    const PipelineOptions& opts);

/// Everything a run needs from `index`.
struct RepositoryIndex {
  ApiTable table;
  std::vector<ApiDescription> descriptions;  // repo stage
  VectorIndex description_index;             // text_description
  VectorIndex code_index;                    // raw_code
  std::vector<CodeWindow> windows;
  VectorIndex window_index;

  const VectorIndex& api_index(SourceMode mode) const {
    return mode == SourceMode::RawCode ? code_index : description_index;
  }
};

RepositoryIndex build_repository_index(const CorpusManifest& manifest, ApiTable table,
                                       std::vector<ApiDescription> descriptions, EmbeddingProvider& embedder,
                                       int window_size, int stride);

struct AllianceArtifacts {
  std::vector<ImplementationStep> steps;
  bool steps_degraded = false;
  std::vector<ApiDescription> predicted;
  std::vector<ApiDescription> extended;
};

nlohmann::json to_json(const ApiDescription& d);
ApiDescription api_description_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ApiRetrievalSet& s);
ApiRetrievalSet api_retrieval_set_from_json(const nlohmann::json& j);

struct GenerationRecord {
  static constexpr int kSchemaVersion = 1;

  std::string task_id;
  std::string condition;
  int sample_index = 0;
  PromptBundle prompt;
  std::string completion;
  std::optional<CodeCandidate> candidate;
  std::optional<std::string> failure;  // "candidate_unparsable" or "llm_failure: ..."
  std::optional<ApiRetrievalSet> retrieved_apis;
  std::optional<AllianceArtifacts> artifacts;
};

nlohmann::json to_json(const GenerationRecord& r);
GenerationRecord generation_record_from_json(const nlohmann::json& j);

struct RunContext {
  Gateway& gateway;
  EmbeddingProvider& embedder;
  const RepositoryIndex& index;
  const PipelineOptions& opts;
  SourceMode api_mode = SourceMode::TextDescription;
};

std::vector<ApiUnit> oracle_units(const GenerationTask& task, const ApiTable& table);

/// Oracle conditions: task.oracle_apis and similar windows keyed on the
/// reference solution. Retrieval runs once; the k samples share it.
std::vector<GenerationRecord> run_condition(const GenerationTask& task, const Condition& condition,
                                            const RunContext& ctx);

struct AllianceRetrieval {
  AllianceArtifacts artifacts;
  ApiRetrievalSet retrieved;
};

/// Steps, predicted and extended descriptions, then top-1 retrieval per description.
AllianceRetrieval alliance_retrieve(const GenerationTask& task, const RunContext& ctx);

std::vector<GenerationRecord> run_alliancecoder(const GenerationTask& task, const RunContext& ctx);

}  // namespace alliance
