#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <set>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "alliance/config.hpp"
#include "alliance/error.hpp"
#include "alliance/jsonl.hpp"
#include "alliance/pipeline.hpp"

namespace alliance {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::Config, msg); }

// Reads `obj[key]` into `out` when present, rejecting keys not listed.
class Reader {
 public:
  Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) config_error(fmt::format("{} must be an object", where_));
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, _] : obj_.items()) {
      if (!seen_.contains(k)) config_error(fmt::format("unknown key '{}' in {}", k, where_));
    }
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      config_error(fmt::format("{}.{} has the wrong type", where_, key));
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

void require_positive(int v, const char* name) {
  if (v < 1) config_error(fmt::format("{} must be at least 1, got {}", name, v));
}

}  // namespace

fs::path RunConfig::cache_path() const {
  if (!paths.cache.empty()) return paths.cache;
  return fs::path(paths.run_dir) / "cache.jsonl";
}

json to_json(const RunConfig& c) {
  return {
      {"schema_version", RunConfig::kSchemaVersion},
      {"mode", to_string(c.mode)},
      {"llm",
       {{"provider", c.llm.provider},
        {"model", c.llm.model},
        {"script", c.llm.script},
        {"max_tokens", c.llm.max_tokens},
        {"max_in_flight", c.llm.max_in_flight}}},
      {"embedding",
       {{"provider", c.embedding.provider},
        {"model", c.embedding.model},
        {"dim", c.embedding.dim},
        {"seed", c.embedding.seed}}},
      {"temperature", c.temperature},
      {"k_samples", c.k_samples},
      {"top_k_similar", c.top_k_similar},
      {"window_size", c.window_size},
      {"stride", c.stride},
      {"token_budget", c.token_budget},
      {"api_source", c.api_source},
      {"conditions", c.conditions},
      {"examples", {{"steps", c.step_examples}, {"api_descs", c.api_desc_examples}}},
      {"scan", {{"include", c.include_globs}, {"exclude", c.exclude_globs}}},
      {"paths",
       {{"corpus_root", c.paths.corpus_root},
        {"benchmark_dir", c.paths.benchmark_dir},
        {"run_dir", c.paths.run_dir},
        {"cache", c.paths.cache}}},
      {"sandbox",
       {{"timeout_ms", c.sandbox.timeout_ms},
        {"memory_mb", c.sandbox.memory_mb},
        {"isolate_network", c.sandbox.isolate_network},
        {"workers", c.sandbox.workers}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "config");
  int version = RunConfig::kSchemaVersion;
  r.get("schema_version", version);
  if (version != RunConfig::kSchemaVersion) {
    config_error(fmt::format("config schema_version {} is not supported (expected {})", version,
                             RunConfig::kSchemaVersion));
  }
  std::string mode(to_string(c.mode));
  r.get("mode", mode);
  c.mode = gateway_mode_from_string(mode);
  if (const json* llm = r.child("llm")) {
    Reader l(*llm, "llm");
    l.get("provider", c.llm.provider);
    l.get("model", c.llm.model);
    l.get("script", c.llm.script);
    l.get("max_tokens", c.llm.max_tokens);
    l.get("max_in_flight", c.llm.max_in_flight);
  }
  if (const json* emb = r.child("embedding")) {
    Reader e(*emb, "embedding");
    e.get("provider", c.embedding.provider);
    e.get("model", c.embedding.model);
    e.get("dim", c.embedding.dim);
    e.get("seed", c.embedding.seed);
  }
  r.get("temperature", c.temperature);
  r.get("k_samples", c.k_samples);
  r.get("top_k_similar", c.top_k_similar);
  r.get("window_size", c.window_size);
  r.get("stride", c.stride);
  r.get("token_budget", c.token_budget);
  r.get("api_source", c.api_source);
  r.get("conditions", c.conditions);
  if (const json* ex = r.child("examples")) {
    Reader e(*ex, "examples");
    e.get("steps", c.step_examples);
    e.get("api_descs", c.api_desc_examples);
  }
  if (const json* scan = r.child("scan")) {
    Reader s(*scan, "scan");
    s.get("include", c.include_globs);
    s.get("exclude", c.exclude_globs);
  }
  if (const json* paths = r.child("paths")) {
    Reader p(*paths, "paths");
    p.get("corpus_root", c.paths.corpus_root);
    p.get("benchmark_dir", c.paths.benchmark_dir);
    p.get("run_dir", c.paths.run_dir);
    p.get("cache", c.paths.cache);
  }
  if (const json* sb = r.child("sandbox")) {
    Reader s(*sb, "sandbox");
    s.get("timeout_ms", c.sandbox.timeout_ms);
    s.get("memory_mb", c.sandbox.memory_mb);
    s.get("isolate_network", c.sandbox.isolate_network);
    s.get("workers", c.sandbox.workers);
  }

  if (c.llm.provider != "openai" && c.llm.provider != "scripted") {
    config_error("llm.provider must be openai or scripted, got " + c.llm.provider);
  }
  if (c.embedding.provider != "hash" && c.embedding.provider != "http") {
    config_error("embedding.provider must be hash or http, got " + c.embedding.provider);
  }
  source_mode_from_string(c.api_source);
  if (c.temperature < 0.0 || c.temperature > 2.0) config_error(fmt::format("temperature {} outside [0, 2]", c.temperature));
  require_positive(c.k_samples, "k_samples");
  require_positive(c.top_k_similar, "top_k_similar");
  require_positive(c.window_size, "window_size");
  require_positive(c.stride, "stride");
  require_positive(c.embedding.dim, "embedding.dim");
  require_positive(c.llm.max_tokens, "llm.max_tokens");
  require_positive(c.sandbox.timeout_ms, "sandbox.timeout_ms");
  require_positive(c.sandbox.memory_mb, "sandbox.memory_mb");
  require_positive(c.sandbox.workers, "sandbox.workers");
  if (c.llm.max_in_flight < 1 || c.llm.max_in_flight > 64) config_error("llm.max_in_flight must be in [1, 64]");
  if (c.token_budget < 0) config_error("token_budget must not be negative");
  expand_conditions(c.conditions);
  return c;
}

std::string render_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

RunConfig parse_config(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) config_error("config is not valid JSON");
  return run_config_from_json(j);
}

RunConfig load_config(const fs::path& file) {
  if (!fs::exists(file)) config_error("config file not found: " + file.string());
  try {
    return parse_config(read_file(file));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) config_error(fmt::format("{}: {}", file.string(), e.what()));
    throw;
  }
}

std::vector<std::string> expand_conditions(const std::vector<std::string>& names) {
  std::vector<std::string> out;
  auto add = [&](const std::string& n) {
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
  };
  for (const auto& n : names) {
    if (n == "all") {
      for (const auto& c : all_conditions()) add(c.name);
    } else if (n == "all8") {
      for (const auto& c : study_conditions()) add(c.name);
    } else {
      add(condition_by_name(n).name);
    }
  }
  if (out.empty()) config_error("no conditions selected");
  return out;
}

void validate_config(const RunConfig& c, bool need_corpus, bool need_bench) {
  if (c.paths.run_dir.empty()) config_error("paths.run_dir is required (or pass --run-dir)");
  if (need_corpus) {
    if (c.paths.corpus_root.empty()) config_error("paths.corpus_root is required (or pass --corpus)");
    if (!fs::is_directory(c.paths.corpus_root)) config_error("corpus root is not a directory: " + c.paths.corpus_root);
  }
  if (need_bench) {
    if (c.paths.benchmark_dir.empty()) config_error("paths.benchmark_dir is required (or pass --bench)");
    if (!fs::is_directory(c.paths.benchmark_dir)) {
      config_error("benchmark dir is not a directory: " + c.paths.benchmark_dir);
    }
  }
  if (c.mode == GatewayMode::Replay && !fs::exists(c.cache_path())) {
    config_error("replay mode needs an existing cache file: " + c.cache_path().string());
  }
  if (c.llm.provider == "scripted" && c.mode != GatewayMode::Replay && c.llm.script.empty()) {
    config_error("llm.provider scripted needs llm.script (or pass --script)");
  }
}

json to_json(const RunManifest& m) {
  json cmds = json::array();
  for (const auto& c : m.commands) {
    cmds.push_back({{"command", c.command},
                    {"started_at", c.started_at},
                    {"finished_at", c.finished_at},
                    {"counters", c.counters},
                    {"ok", c.ok}});
  }
  return {{"config", m.config},
          {"template_versions", m.template_versions},
          {"corpus_hash", m.corpus_hash},
          {"commands", cmds}};
}

RunManifest run_manifest_from_json(const json& j) {
  RunManifest m;
  m.config = j.value("config", json::object());
  m.template_versions = j.value("template_versions", std::map<std::string, std::string>{});
  m.corpus_hash = j.value("corpus_hash", "");
  for (const auto& c : j.value("commands", json::array())) {
    m.commands.push_back({c.at("command").get<std::string>(), c.value("started_at", ""), c.value("finished_at", ""),
                          c.value("counters", std::map<std::string, std::size_t>{}), c.value("ok", false)});
  }
  return m;
}

std::string utc_timestamp() {
  auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", now);
}

RunLock::RunLock(const fs::path& run_dir) {
  fs::create_directories(run_dir);
  fs::path file = run_dir / ".lock";
  fd_ = ::open(file.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(ErrorKind::Io, "cannot open lock file " + file.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error(ErrorKind::Environment, "run directory " + run_dir.string() + " is in use by another process");
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace alliance
