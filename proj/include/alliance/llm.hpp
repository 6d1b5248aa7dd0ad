#pragma once

// Chat-completion gateway with record/replay caching, stage templates and
// code extraction from completions.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "alliance/http.hpp"

namespace alliance {

enum class StageTag { ApiDescribe, Steps, ApiDescs, Extend, Generate };

std::string_view to_string(StageTag stage);
StageTag stage_from_string(std::string_view s);

struct ChatMessage {
  std::string role;  // system, user or assistant
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_tokens = 1024;
  StageTag stage = StageTag::Generate;
  std::string template_version;
  int sample_index = 0;  // 1..k for generation samples, 0 for single-shot stages

  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

/// Throws Precondition when messages are empty, the first role is not
/// system/user, or temperature is outside [0, 2].
void validate(const ChatRequest& request);

nlohmann::json to_json(const ChatRequest& request);
ChatRequest chat_request_from_json(const nlohmann::json& j);

/// sha256 over the canonical JSON of the fields that determine a completion.
std::string cache_key(const ChatRequest& request);

struct CompletionResult {
  std::string text;
  std::size_t prompt_token_count = 0;
  std::size_t completion_token_count = 0;
  bool cached = false;
};

/// bytes / 4, rounded up.
std::size_t estimate_tokens(std::string_view text);
std::size_t estimate_tokens(const std::vector<ChatMessage>& messages);

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string id() const = 0;
  virtual CompletionResult chat(const ChatRequest& request) = 0;
};

/// OpenAI-compatible `/chat/completions`. 4xx is a config error; 5xx and
/// transport failures are retried, then raised as Provider errors.
class OpenAiChatProvider : public ChatProvider {
 public:
  OpenAiChatProvider(std::shared_ptr<HttpTransport> transport, std::string base_url, std::string api_key,
                     RetryPolicy retry = {});

  std::string id() const override { return "openai"; }
  CompletionResult chat(const ChatRequest& request) override;

 private:
  std::shared_ptr<HttpTransport> transport_;
  std::string base_url_;
  std::string api_key_;
  RetryPolicy retry_;
};

/// Offline provider answering from a rules document:
///   {"rules": [{"stage": "steps", "contains": ["..."], "responses": ["...", ...]}]}
/// The first rule whose stage matches and whose substrings all occur in the
/// last user message wins; responses cycle by sample_index. A rule with
/// "fail": true raises a Provider error instead.
class ScriptedProvider : public ChatProvider {
 public:
  explicit ScriptedProvider(nlohmann::json rules);
  static std::shared_ptr<ScriptedProvider> from_file(const std::filesystem::path& file);

  std::string id() const override { return "scripted"; }
  CompletionResult chat(const ChatRequest& request) override;

 private:
  struct Rule {
    std::optional<StageTag> stage;
    std::vector<std::string> contains;
    std::vector<std::string> responses;
    bool fail = false;
  };
  std::vector<Rule> rules_;
};

struct CacheEntry {
  std::string key;
  StageTag stage = StageTag::Generate;
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

nlohmann::json to_json(const CacheEntry& e);
CacheEntry cache_entry_from_json(const nlohmann::json& j);

/// Append-only completion cache backed by a JSONL file. The first record for
/// a key wins. Safe for concurrent readers with serialized writers.
class ReplayCache {
 public:
  ReplayCache() = default;
  explicit ReplayCache(std::filesystem::path file);

  std::optional<CacheEntry> find(const std::string& key) const;
  /// Returns false when the key was already present.
  bool append(const CacheEntry& entry);
  std::size_t size() const;
  std::vector<CacheEntry> entries() const;  // file order
  const std::filesystem::path& file() const { return file_; }

 private:
  std::filesystem::path file_;
  mutable std::shared_mutex mu_;
  std::vector<CacheEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_key_;
};

enum class GatewayMode { Live, Record, Replay };

std::string_view to_string(GatewayMode mode);
GatewayMode gateway_mode_from_string(std::string_view s);

class Gateway {
 public:
  /// `provider` may be null in replay mode. `delta_file`, when set, receives a
  /// copy of every newly recorded entry.
  Gateway(GatewayMode mode, std::shared_ptr<ChatProvider> provider, std::shared_ptr<ReplayCache> cache,
          std::optional<std::filesystem::path> delta_file = std::nullopt, std::ptrdiff_t max_in_flight = 4);

  /// Record mode serves keys already present in the cache without a call.
  CompletionResult complete(const ChatRequest& request);

  GatewayMode mode() const { return mode_; }
  std::size_t provider_calls() const { return provider_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }

 private:
  GatewayMode mode_;
  std::shared_ptr<ChatProvider> provider_;
  std::shared_ptr<ReplayCache> cache_;
  std::optional<std::filesystem::path> delta_file_;
  std::mutex delta_mu_;
  std::counting_semaphore<64> in_flight_;
  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

struct PromptExample {
  std::string example_id;
  StageTag stage = StageTag::Steps;
  std::string body;
};

/// Built-in in-context examples (two each for steps and api_descs).
std::vector<PromptExample> default_examples(StageTag stage);
std::vector<PromptExample> load_examples(const std::filesystem::path& jsonl_file);

struct PromptTemplate {
  StageTag stage;
  int version;
  std::string system;
  std::string user;
};

const PromptTemplate& template_for(StageTag stage);
/// "<stage>@v<version>", part of every cache key.
std::string template_version(StageTag stage);
std::map<std::string, std::string> template_versions();

/// Substitutes {slot} placeholders ("{{" and "}}" are literal braces). The
/// {examples} slot is filled from `examples`, sorted by example_id.
std::vector<ChatMessage> render_template(StageTag stage, const std::map<std::string, std::string>& bindings,
                                         std::span<const PromptExample> examples = {});

enum class ExtractionMethod { FencedBlock, HeuristicDefScan, WholeCompletion };

std::string_view to_string(ExtractionMethod m);
ExtractionMethod extraction_method_from_string(std::string_view s);

struct CodeCandidate {
  std::string source;
  ExtractionMethod method = ExtractionMethod::WholeCompletion;

  friend bool operator==(const CodeCandidate&, const CodeCandidate&) = default;
};

/// nullopt means CandidateUnparsable.
std::optional<CodeCandidate> extract_code(std::string_view completion);

}  // namespace alliance
