#include <fstream>

#include <fmt/format.h>

#include "alliance/error.hpp"
#include "alliance/hashing.hpp"
#include "alliance/jsonl.hpp"
#include "alliance/llm.hpp"

namespace alliance {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kStageNames[] = {"api_describe", "steps", "api_descs", "extend", "generate"};

}  // namespace

std::string_view to_string(StageTag stage) { return kStageNames[static_cast<int>(stage)]; }

StageTag stage_from_string(std::string_view s) {
  for (int i = 0; i < 5; ++i) {
    if (kStageNames[i] == s) return static_cast<StageTag>(i);
  }
  throw Error(ErrorKind::Parse, "unknown stage tag: " + std::string(s));
}

void validate(const ChatRequest& request) {
  if (request.messages.empty()) throw Error(ErrorKind::Precondition, "chat request has no messages");
  const std::string& first = request.messages.front().role;
  if (first != "system" && first != "user") {
    throw Error(ErrorKind::Precondition, "first chat message must be system or user, got " + first);
  }
  for (const auto& m : request.messages) {
    if (m.role != "system" && m.role != "user" && m.role != "assistant") {
      throw Error(ErrorKind::Precondition, "invalid chat role: " + m.role);
    }
  }
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
    throw Error(ErrorKind::Precondition, fmt::format("temperature {} outside [0, 2]", request.temperature));
  }
}

json to_json(const ChatRequest& r) {
  json messages = json::array();
  for (const auto& m : r.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", r.model},
          {"messages", messages},
          {"temperature", r.temperature},
          {"max_tokens", r.max_tokens},
          {"stage_tag", to_string(r.stage)},
          {"template_version", r.template_version},
          {"sample_index", r.sample_index}};
}

ChatRequest chat_request_from_json(const json& j) {
  ChatRequest r;
  r.model = j.at("model").get<std::string>();
  for (const auto& m : j.at("messages")) {
    r.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
  }
  r.temperature = j.at("temperature").get<double>();
  r.max_tokens = j.value("max_tokens", 1024);
  r.stage = stage_from_string(j.at("stage_tag").get<std::string>());
  r.template_version = j.value("template_version", "");
  r.sample_index = j.value("sample_index", 0);
  return r;
}

std::string cache_key(const ChatRequest& r) {
  json j = to_json(r);
  j.erase("max_tokens");
  return sha256_hex(j.dump());
}

std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

std::size_t estimate_tokens(const std::vector<ChatMessage>& messages) {
  std::size_t bytes = 0;
  for (const auto& m : messages) bytes += m.content.size();
  return (bytes + 3) / 4;
}

json to_json(const CacheEntry& e) {
  return {{"key", e.key},
          {"stage_tag", to_string(e.stage)},
          {"text", e.text},
          {"prompt_tokens", e.prompt_tokens},
          {"completion_tokens", e.completion_tokens}};
}

CacheEntry cache_entry_from_json(const json& j) {
  CacheEntry e;
  e.key = j.at("key").get<std::string>();
  e.stage = stage_from_string(j.at("stage_tag").get<std::string>());
  e.text = j.at("text").get<std::string>();
  e.prompt_tokens = j.value("prompt_tokens", std::size_t{0});
  e.completion_tokens = j.value("completion_tokens", std::size_t{0});
  return e;
}

ReplayCache::ReplayCache(fs::path file) : file_(std::move(file)) {
  if (!fs::exists(file_)) return;
  for (const auto& row : read_jsonl(file_)) {
    CacheEntry e = cache_entry_from_json(row);
    if (by_key_.contains(e.key)) continue;
    by_key_.emplace(e.key, entries_.size());
    entries_.push_back(std::move(e));
  }
}

std::optional<CacheEntry> ReplayCache::find(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = by_key_.find(key);
  if (it == by_key_.end()) return std::nullopt;
  return entries_[it->second];
}

bool ReplayCache::append(const CacheEntry& entry) {
  std::unique_lock lock(mu_);
  if (by_key_.contains(entry.key)) return false;
  if (!file_.empty()) append_jsonl(file_, to_json(entry));
  by_key_.emplace(entry.key, entries_.size());
  entries_.push_back(entry);
  return true;
}

std::size_t ReplayCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

std::vector<CacheEntry> ReplayCache::entries() const {
  std::shared_lock lock(mu_);
  return entries_;
}

std::string_view to_string(GatewayMode mode) {
  switch (mode) {
    case GatewayMode::Live:
      return "live";
    case GatewayMode::Record:
      return "record";
    case GatewayMode::Replay:
      return "replay";
  }
  return "?";
}

GatewayMode gateway_mode_from_string(std::string_view s) {
  if (s == "live") return GatewayMode::Live;
  if (s == "record") return GatewayMode::Record;
  if (s == "replay") return GatewayMode::Replay;
  throw Error(ErrorKind::Config, "unknown mode: " + std::string(s) + " (expected live, record or replay)");
}

Gateway::Gateway(GatewayMode mode, std::shared_ptr<ChatProvider> provider, std::shared_ptr<ReplayCache> cache,
                 std::optional<fs::path> delta_file, std::ptrdiff_t max_in_flight)
    : mode_(mode),
      provider_(std::move(provider)),
      cache_(cache ? std::move(cache) : std::make_shared<ReplayCache>()),
      delta_file_(std::move(delta_file)),
      in_flight_(std::clamp<std::ptrdiff_t>(max_in_flight, 1, 64)) {
  if (mode_ != GatewayMode::Replay && !provider_) {
    throw Error(ErrorKind::Config, fmt::format("{} mode needs an LLM provider", to_string(mode_)));
  }
}

CompletionResult Gateway::complete(const ChatRequest& request) {
  validate(request);
  const std::string key = cache_key(request);
  if (mode_ != GatewayMode::Live) {
    if (auto hit = cache_->find(key)) {
      cache_hits_.fetch_add(1);
      return {hit->text, hit->prompt_tokens, hit->completion_tokens, true};
    }
    if (mode_ == GatewayMode::Replay) {
      throw Error(ErrorKind::ReplayMiss, fmt::format("replay cache has no entry for key {} (stage {})", key,
                                                     to_string(request.stage)));
    }
  }
  CompletionResult result;
  {
    in_flight_.acquire();
    struct Release {
      std::counting_semaphore<64>& s;
      ~Release() { s.release(); }
    } release{in_flight_};
    provider_calls_.fetch_add(1);
    result = provider_->chat(request);
  }
  result.cached = false;
  if (mode_ == GatewayMode::Record) {
    CacheEntry entry{key, request.stage, result.text, result.prompt_token_count, result.completion_token_count};
    if (cache_->append(entry) && delta_file_) {
      std::lock_guard lock(delta_mu_);
      append_jsonl(*delta_file_, to_json(entry));
    }
  }
  return result;
}

OpenAiChatProvider::OpenAiChatProvider(std::shared_ptr<HttpTransport> transport, std::string base_url,
                                       std::string api_key, RetryPolicy retry)
    : transport_(std::move(transport)),
      base_url_(std::move(base_url)),
      api_key_(std::move(api_key)),
      retry_(std::move(retry)) {}

CompletionResult OpenAiChatProvider::chat(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  HttpRequest req;
  req.url = base_url_ + "/chat/completions";
  req.headers = {{"Authorization", "Bearer " + api_key_}};
  req.body = json{{"model", request.model},
                  {"messages", messages},
                  {"temperature", request.temperature},
                  {"max_tokens", request.max_tokens}}
                 .dump();
  std::string last_error;
  for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
    HttpResponse res = transport_->post(req);
    if (res.status >= 200 && res.status < 300) {
      json j = json::parse(res.body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
        throw Error(ErrorKind::Provider, "malformed chat completion response");
      }
      const json& msg = j["choices"][0].at("message");
      CompletionResult out;
      out.text = msg.value("content", "");
      if (out.text.empty()) throw Error(ErrorKind::Provider, "provider returned an empty completion");
      if (j.contains("usage")) {
        out.prompt_token_count = j["usage"].value("prompt_tokens", std::size_t{0});
        out.completion_token_count = j["usage"].value("completion_tokens", std::size_t{0});
      } else {
        out.prompt_token_count = estimate_tokens(request.messages);
        out.completion_token_count = estimate_tokens(out.text);
      }
      return out;
    }
    if (res.status >= 400 && res.status < 500) {
      throw Error(ErrorKind::Config, fmt::format("chat request rejected ({}): {}", res.status, res.body));
    }
    last_error = res.status == 0 ? res.error : fmt::format("HTTP {}", res.status);
    if (attempt < retry_.attempts) retry_.pause(attempt);
  }
  throw Error(ErrorKind::Provider,
              fmt::format("chat request failed after {} attempts: {}", retry_.attempts, last_error));
}

ScriptedProvider::ScriptedProvider(json rules) {
  if (!rules.contains("rules") || !rules["rules"].is_array()) {
    throw Error(ErrorKind::Parse, "scripted provider: document needs a \"rules\" array");
  }
  for (const auto& r : rules["rules"]) {
    Rule rule;
    if (r.contains("stage")) rule.stage = stage_from_string(r["stage"].get<std::string>());
    rule.contains = r.value("contains", std::vector<std::string>{});
    rule.responses = r.value("responses", std::vector<std::string>{});
    rule.fail = r.value("fail", false);
    if (!rule.fail && rule.responses.empty()) {
      throw Error(ErrorKind::Parse, "scripted provider: rule without responses");
    }
    rules_.push_back(std::move(rule));
  }
}

std::shared_ptr<ScriptedProvider> ScriptedProvider::from_file(const fs::path& file) {
  json j = json::parse(read_file(file), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::Parse, "invalid JSON in " + file.string());
  return std::make_shared<ScriptedProvider>(std::move(j));
}

CompletionResult ScriptedProvider::chat(const ChatRequest& request) {
  const std::string& last = request.messages.back().content;
  for (const auto& rule : rules_) {
    if (rule.stage && *rule.stage != request.stage) continue;
    bool all = std::all_of(rule.contains.begin(), rule.contains.end(),
                           [&](const std::string& s) { return last.find(s) != std::string::npos; });
    if (!all) continue;
    if (rule.fail) throw Error(ErrorKind::Provider, "scripted failure");
    std::size_t i = request.sample_index > 0 ? static_cast<std::size_t>(request.sample_index - 1) : 0;
    const std::string& text = rule.responses[i % rule.responses.size()];
    return {text, estimate_tokens(request.messages), estimate_tokens(text), false};
  }
  throw Error(ErrorKind::Provider, fmt::format("scripted provider has no rule for a {} request", to_string(request.stage)));
}

}  // namespace alliance
