#include <algorithm>
#include <cstdlib>
#include <future>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "alliance/app.hpp"
#include "alliance/error.hpp"
#include "alliance/http.hpp"
#include "alliance/jsonl.hpp"

namespace alliance {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kEnvHelp =
    "Environment:\n"
    "  ALLIANCE_LLM_BASE_URL     chat endpoint base URL (default https://api.openai.com/v1)\n"
    "  ALLIANCE_LLM_API_KEY      chat endpoint key, required for the openai provider outside replay mode\n"
    "  ALLIANCE_EMBED_BASE_URL   embedding endpoint base URL (default https://api.openai.com/v1)\n"
    "  ALLIANCE_EMBED_API_KEY    embedding endpoint key, required for the http embedding provider\n"
    "Exit codes: 0 success, 1 fatal error, 2 config error.\n";

const std::vector<std::string> kIndexStages = {"corpus", "descriptions", "vectors"};

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

std::string require_env(const char* name, std::string_view why) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') {
    throw Error(ErrorKind::Config, fmt::format("environment variable {} is not set ({})", name, why));
  }
  return v;
}

// Flags shared by the pipeline commands. Empty / negative means "not given".
struct Overrides {
  std::string config_file;
  std::string run_dir;
  std::string corpus;
  std::string bench;
  std::string mode;
  std::string cache;
  std::string llm_provider;
  std::string script;
  std::string model;
  std::string api_source;
  std::vector<std::string> conditions;
  std::vector<std::string> tasks;
  int k = 0;
  int timeout_ms = 0;
  int workers = 0;
  std::string report = "all";
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "Run config file (JSON)");
  cmd->add_option("--run-dir", o.run_dir, "Run directory");
  cmd->add_option("--corpus", o.corpus, "Repository root to index");
  cmd->add_option("--bench", o.bench, "Benchmark directory (one subdirectory per task)");
  cmd->add_option("--mode", o.mode, "live, record or replay");
  cmd->add_option("--cache", o.cache, "Replay cache file");
  cmd->add_option("--llm-provider", o.llm_provider, "openai or scripted");
  cmd->add_option("--script", o.script, "Rules file for the scripted provider");
  cmd->add_option("--model", o.model, "Chat model name");
}

RunConfig resolve_config(const Overrides& o) {
  RunConfig c;
  if (!o.config_file.empty()) {
    c = load_config(o.config_file);
  } else if (!o.run_dir.empty() && fs::exists(RunPaths{o.run_dir}.config())) {
    c = load_config(RunPaths{o.run_dir}.config());
  }
  if (!o.run_dir.empty()) c.paths.run_dir = o.run_dir;
  if (!o.corpus.empty()) c.paths.corpus_root = o.corpus;
  if (!o.bench.empty()) c.paths.benchmark_dir = o.bench;
  if (!o.mode.empty()) c.mode = gateway_mode_from_string(o.mode);
  if (!o.cache.empty()) c.paths.cache = o.cache;
  if (!o.llm_provider.empty()) c.llm.provider = o.llm_provider;
  if (!o.script.empty()) c.llm.script = o.script;
  if (!o.model.empty()) c.llm.model = o.model;
  if (!o.api_source.empty()) c.api_source = o.api_source;
  if (!o.conditions.empty()) c.conditions = o.conditions;
  if (o.k > 0) c.k_samples = o.k;
  if (o.timeout_ms > 0) c.sandbox.timeout_ms = o.timeout_ms;
  if (o.workers > 0) c.sandbox.workers = o.workers;
  return run_config_from_json(to_json(c));  // re-check ranges after overrides
}

std::unique_ptr<EmbeddingProvider> make_embedder(const RunConfig& c) {
  if (c.embedding.provider == "hash") {
    return std::make_unique<HashProjectionEmbedder>(static_cast<std::size_t>(c.embedding.dim), c.embedding.seed);
  }
  if (c.mode == GatewayMode::Replay) {
    std::cerr << "warning: replay mode caches chat completions only; the http embedding provider still calls "
                 "the network\n";
  }
  if (c.embedding.model.empty()) throw Error(ErrorKind::Config, "embedding.model is required for the http provider");
  return std::make_unique<HttpEmbedder>(std::shared_ptr<HttpTransport>(make_httplib_transport()),
                                        env_or(kEnvEmbedBaseUrl, "https://api.openai.com/v1"),
                                        require_env(kEnvEmbedApiKey, "http embedding provider"), c.embedding.model,
                                        static_cast<std::size_t>(c.embedding.dim));
}

std::unique_ptr<Gateway> make_gateway(const RunConfig& c, const RunPaths& paths) {
  std::shared_ptr<ChatProvider> provider;
  if (c.mode != GatewayMode::Replay) {
    if (c.llm.provider == "scripted") {
      provider = ScriptedProvider::from_file(c.llm.script);
    } else {
      provider = std::make_shared<OpenAiChatProvider>(
          std::shared_ptr<HttpTransport>(make_httplib_transport()), env_or(kEnvLlmBaseUrl, "https://api.openai.com/v1"),
          require_env(kEnvLlmApiKey, fmt::format("needed by the openai provider in {} mode", to_string(c.mode))));
    }
  }
  std::shared_ptr<ReplayCache> cache;
  std::optional<fs::path> delta;
  if (c.mode != GatewayMode::Live) {
    cache = std::make_shared<ReplayCache>(c.cache_path());
    if (c.mode == GatewayMode::Record) delta = paths.cache_delta();
  }
  return std::make_unique<Gateway>(c.mode, provider, cache, delta, c.llm.max_in_flight);
}

PipelineOptions pipeline_options(const RunConfig& c) {
  PipelineOptions o;
  o.model = c.llm.model;
  o.temperature = c.temperature;
  o.max_tokens = c.llm.max_tokens;
  o.k_samples = c.k_samples;
  o.top_k_similar = static_cast<std::size_t>(c.top_k_similar);
  o.token_budget = static_cast<std::size_t>(c.token_budget);
  if (!c.step_examples.empty()) o.step_examples = load_examples(c.step_examples);
  if (!c.api_desc_examples.empty()) o.api_desc_examples = load_examples(c.api_desc_examples);
  return o;
}

ScanOptions scan_options(const RunConfig& c) { return {c.include_globs, c.exclude_globs}; }

// Manifest bookkeeping around one command.
class CommandScope {
 public:
  CommandScope(const RunPaths& paths, const RunConfig& config, std::string command) : paths_(paths) {
    if (fs::exists(paths.manifest())) manifest_ = run_manifest_from_json(json::parse(read_file(paths.manifest())));
    manifest_.config = to_json(config);
    manifest_.template_versions = template_versions();
    manifest_.commands.push_back({std::move(command), utc_timestamp(), "", {}, false});
    write_file_atomic(paths.config(), render_config(config));
    flush();
  }
  ~CommandScope() {
    try {
      entry().finished_at = utc_timestamp();
      flush();
    } catch (...) {
    }
  }
  CommandEntry& entry() { return manifest_.commands.back(); }
  void set_corpus_hash(std::string h) { manifest_.corpus_hash = std::move(h); }
  void count(const std::string& name, std::size_t v) { entry().counters[name] += v; }
  void done() { entry().ok = true; }

 private:
  void flush() { write_file_atomic(paths_.manifest(), to_json(manifest_).dump(2) + "\n"); }
  RunPaths paths_;
  RunManifest manifest_;
};

json index_fingerprint(const RunConfig& c, const std::string& corpus_hash, const EmbeddingProvider& embedder) {
  return {{"corpus_hash", corpus_hash},
          {"api_describe", template_version(StageTag::ApiDescribe)},
          {"model", c.llm.model},
          {"embedder", embedder.id()},
          {"window_size", c.window_size},
          {"stride", c.stride}};
}

// ---------------------------------------------------------------- index

int cmd_index(const RunConfig& c, std::ostream& out) {
  validate_config(c, true, false);
  RunPaths paths{c.paths.run_dir};
  RunLock lock(paths.root);
  CommandScope scope(paths, c, "index");

  CorpusManifest manifest = scan_repository(c.paths.corpus_root, scan_options(c));
  for (const auto& w : manifest.warnings) out << fmt::format("warning: {}: {}\n", w.path, w.message);
  std::string hash = manifest.hash();
  scope.set_corpus_hash(hash);
  auto embedder = make_embedder(c);
  json fingerprint = index_fingerprint(c, hash, *embedder);

  json state = {{"fingerprint", fingerprint}, {"stages", json::array()}};
  if (fs::exists(paths.index_state())) {
    json old = json::parse(read_file(paths.index_state()), nullptr, false);
    if (!old.is_discarded() && old.value("fingerprint", json()) == fingerprint) state = old;
  }
  auto done = [&](const std::string& stage) {
    for (const auto& s : state["stages"]) {
      if (s == stage) return true;
    }
    return false;
  };
  auto mark = [&](const std::string& stage) {
    state["stages"].push_back(stage);
    write_file_atomic(paths.index_state(), state.dump(2) + "\n");
  };
  if (std::all_of(kIndexStages.begin(), kIndexStages.end(), done)) {
    out << fmt::format("index up to date ({} files, corpus {})\n", manifest.files.size(), hash.substr(0, 12));
    scope.done();
    return 0;
  }

  fs::create_directories(paths.index_dir());
  ApiTable table = build_api_table(manifest);
  for (const auto& e : table.errors) out << fmt::format("warning: {}: {}\n", e.path, e.message);
  if (!done("corpus")) {
    write_manifest(paths.index_dir() / "manifest.jsonl", manifest);
    write_api_table(paths.index_dir() / "api_units.jsonl", table);
    mark("corpus");
  }

  std::vector<ApiDescription> descriptions;
  if (!done("descriptions")) {
    auto gateway = make_gateway(c, paths);
    descriptions = describe_repository_apis(table, *gateway, *embedder, pipeline_options(c));
    std::vector<json> rows;
    for (const auto& d : descriptions) rows.push_back(to_json(d));
    write_jsonl(paths.index_dir() / "descriptions.jsonl", rows);
    scope.count("llm_calls", gateway->provider_calls());
    scope.count("cache_hits", gateway->cache_hits());
    mark("descriptions");
  } else {
    for (const auto& row : read_jsonl(paths.index_dir() / "descriptions.jsonl")) {
      descriptions.push_back(api_description_from_json(row));
    }
  }
  std::size_t degraded = std::count_if(descriptions.begin(), descriptions.end(), [](const auto& d) { return d.degraded; });

  RepositoryIndex idx = build_repository_index(manifest, table, descriptions, *embedder, c.window_size, c.stride);
  idx.description_index.save(paths.index_dir() / "description_index.alvx");
  idx.code_index.save(paths.index_dir() / "code_index.alvx");
  idx.window_index.save(paths.index_dir() / "window_index.alvx");
  if (!done("vectors")) mark("vectors");

  out << fmt::format("indexed {} files: {} API units, {} descriptions ({} degraded), {} code windows\n",
                     manifest.files.size(), table.units.size(), descriptions.size(), degraded, idx.windows.size());
  scope.count("units", table.units.size());
  scope.done();
  return 0;
}

// ---------------------------------------------------------------- generate

std::set<int> present_samples(const fs::path& file) {
  std::set<int> out;
  if (!fs::exists(file)) return out;
  for (const auto& row : read_jsonl(file)) out.insert(row.value("sample_index", 0));
  return out;
}

std::vector<GenerationTask> select_tasks(std::vector<GenerationTask> tasks, const std::vector<std::string>& wanted) {
  if (wanted.empty()) return tasks;
  std::vector<GenerationTask> out;
  for (const auto& id : wanted) {
    auto it = std::find_if(tasks.begin(), tasks.end(), [&](const auto& t) { return t.task_id == id; });
    if (it == tasks.end()) {
      std::vector<std::string> ids;
      for (const auto& t : tasks) ids.push_back(t.task_id);
      throw Error(ErrorKind::Config, fmt::format("unknown task '{}'; available: {}", id, fmt::join(ids, ", ")));
    }
    out.push_back(*it);
  }
  return out;
}

void require_index(const RunPaths& paths) {
  bool complete = false;
  if (fs::exists(paths.index_state())) {
    json state = json::parse(read_file(paths.index_state()), nullptr, false);
    complete = !state.is_discarded() && state.value("stages", json::array()).size() == kIndexStages.size();
  }
  if (!complete) {
    throw Error(ErrorKind::Precondition,
                fmt::format("no complete index in {}; run `alliance index` first", paths.index_dir().string()));
  }
}

int cmd_generate(const RunConfig& c, const std::vector<std::string>& task_ids, std::ostream& out) {
  validate_config(c, false, true);
  RunPaths paths{c.paths.run_dir};
  RunLock lock(paths.root);
  require_index(paths);
  CommandScope scope(paths, c, "generate");

  RepositoryIndex index = load_repository_index(paths, c.window_size, c.stride);
  CorpusManifest manifest = load_indexed_manifest(paths);
  scope.set_corpus_hash(manifest.hash());
  auto tasks = select_tasks(load_tasks(c.paths.benchmark_dir, manifest, index.table), task_ids);
  auto conditions = expand_conditions(c.conditions);
  auto embedder = make_embedder(c);
  PipelineOptions opts = pipeline_options(c);
  std::unique_ptr<Gateway> gateway;  // created on first use so an up-to-date run needs no provider

  std::size_t written = 0, skipped = 0;
  std::mutex mu;
  for (const auto& name : conditions) {
    const Condition& cond = condition_by_name(name);
    std::vector<const GenerationTask*> todo;
    for (const auto& t : tasks) {
      auto have = present_samples(paths.records_file(name, t.task_id));
      bool complete = true;
      for (int i = 1; i <= c.k_samples; ++i) complete &= have.contains(i);
      if (complete) {
        skipped += static_cast<std::size_t>(c.k_samples);
      } else {
        todo.push_back(&t);
      }
    }
    if (todo.empty()) {
      out << fmt::format("{}: up to date\n", name);
      continue;
    }
    if (!gateway) gateway = make_gateway(c, paths);
    RunContext ctx{*gateway, *embedder, index, opts, source_mode_from_string(c.api_source)};
    std::size_t cond_written = 0;
    // tasks run concurrently; the gateway bounds in-flight requests
    std::vector<std::future<void>> jobs;
    for (const GenerationTask* t : todo) {
      jobs.push_back(std::async(std::launch::async, [&, t] {
        auto records = run_condition(*t, cond, ctx);
        fs::path file = paths.records_file(name, t->task_id);
        auto have = present_samples(file);
        std::size_t n = 0;
        for (const auto& r : records) {
          if (have.contains(r.sample_index)) continue;
          append_jsonl(file, to_json(r));
          ++n;
        }
        std::lock_guard lk(mu);
        cond_written += n;
      }));
    }
    std::exception_ptr first;
    for (auto& j : jobs) {
      try {
        j.get();
      } catch (...) {
        if (!first) first = std::current_exception();
      }
    }
    if (first) std::rethrow_exception(first);
    written += cond_written;
    out << fmt::format("{}: {} records written for {} tasks\n", name, cond_written, todo.size());
  }
  if (gateway) {
    scope.count("llm_calls", gateway->provider_calls());
    scope.count("cache_hits", gateway->cache_hits());
  }
  scope.count("records_written", written);
  scope.count("records_skipped", skipped);
  out << fmt::format("{} records written, {} already present\n", written, skipped);
  scope.done();
  return 0;
}

// ---------------------------------------------------------------- eval

struct Job {
  std::string condition;
  const GenerationTask* task;
  const GenerationRecord* record;
};

std::vector<int> report_ks(const VerdictTable& table) {
  std::size_t n = 0;
  for (const auto& [_, tasks] : table) {
    for (const auto& [__, v] : tasks) n = n == 0 ? v.size() : std::min(n, v.size());
  }
  std::vector<int> ks;
  for (int k : {1, 3, 5}) {
    if (static_cast<std::size_t>(k) <= n) ks.push_back(k);
  }
  return ks;
}

PassAtKRow pass_row(const std::string& name, const std::map<std::string, std::vector<VerdictStatus>>& tasks,
                    std::span<const int> ks, const std::set<std::string>* only = nullptr) {
  PassAtKRow row{name, {}, {}};
  for (int k : ks) {
    std::vector<double> est, emp;
    for (const auto& [task, v] : tasks) {
      if (only && !only->contains(task)) continue;
      int n = static_cast<int>(v.size());
      int c = static_cast<int>(std::count(v.begin(), v.end(), VerdictStatus::Pass));
      est.push_back(pass_at_k_estimator(n, c, k).value);
      emp.push_back(pass_at_k_empirical(std::span<const VerdictStatus>(v).first(static_cast<std::size_t>(k)), k).value);
    }
    row.estimator[k] = dataset_percent(est);
    row.empirical[k] = dataset_percent(emp);
  }
  return row;
}

std::vector<const ApiUnit*> oracle_ptrs(const GenerationTask& t, const ApiTable& table) {
  std::vector<const ApiUnit*> out;
  for (const auto& id : t.oracle_apis) {
    if (const ApiUnit* u = table.by_id(id)) out.push_back(u);
  }
  return out;
}

std::string build_reports(const RunPaths& paths, const std::vector<GenerationTask>& tasks, const ApiTable& table,
                          const std::string& mode) {
  VerdictTable verdicts = load_verdicts(paths);
  auto records = load_records(paths);
  auto ks = report_ks(verdicts);
  const int k_report = ks.empty() ? 1 : ks.back();
  std::map<std::string, const GenerationTask*> by_id;
  for (const auto& t : tasks) by_id[t.task_id] = &t;

  std::string tables, details;
  json summary = {{"ks", ks}, {"conditions", json::object()}};

  std::vector<PassAtKRow> rows;
  for (const auto& c : all_conditions()) {
    if (!verdicts.contains(c.name)) continue;
    rows.push_back(pass_row(c.name, verdicts[c.name], ks));
    summary["conditions"][c.name] = {{"estimator", rows.back().estimator}, {"empirical", rows.back().empirical}};
  }
  tables += "Pass@k (estimator, percent) and any-pass (empirical, percent)\n" + render_pass_at_k_table(rows, ks);

  if (verdicts.contains("Context") && verdicts.contains("API") && verdicts.contains("ConAPI")) {
    VerdictTable sub;
    for (const char* name : {"Context", "API", "ConAPI", "Pure"}) {
      if (verdicts.contains(name)) sub[name] = verdicts[name];
    }
    std::map<std::string, ContainmentResult> containment;
    for (const auto& [id, _] : sub["Context"]) {
      if (!by_id.contains(id)) continue;
      auto ptrs = oracle_ptrs(*by_id[id], table);
      containment[id] = classify_containment(by_id[id]->context_block, ptrs);
    }
    IntersectionReport inter = intersection_report(sub, containment, k_report);
    tables += fmt::format("\nPassed tasks by context containment (Pass@{})\n", k_report);
    tables += fmt::format("{:<18}{:>8}  {}\n", "Containment", "Total", "CPass / BPass");
    for (const auto& s : inter.containment) {
      tables += fmt::format("{:<18}{:>8}  {}\n", to_string(s.containment), s.total.size(), render_containment_row(s));
    }
    details += "\n" + render_intersection(inter);
    if (records.contains("ConAPI")) {
      std::map<std::string, std::size_t> tokens;
      for (const auto& [task, recs] : records["ConAPI"]) {
        if (!recs.empty()) tokens[task] = recs.front().prompt.token_estimate;
      }
      details += "\nConAPI prompt length (estimated tokens) for tasks passed by API\n" +
                 render_length_report(prompt_length_analysis(tokens, inter.pass_sets["API"], inter.pass_sets["ConAPI"]));
    }
  }

  if (records.contains("AllianceCoder")) {
    std::set<std::string> passed, oracle_passed;
    if (verdicts.contains("AllianceCoder")) passed = pass_set(verdicts["AllianceCoder"], k_report);
    if (verdicts.contains("ConAPI")) oracle_passed = pass_set(verdicts["ConAPI"], k_report);
    std::vector<CountInput> counts;
    std::vector<RecallInput> recalls;
    for (const auto& [task, recs] : records["AllianceCoder"]) {
      if (recs.empty() || !by_id.contains(task)) continue;
      const GenerationTask& t = *by_id[task];
      std::set<std::string> retrieved;
      if (recs.front().retrieved_apis) {
        retrieved.insert(recs.front().retrieved_apis->dedup.begin(), recs.front().retrieved_apis->dedup.end());
      }
      CountInput ci{task, retrieved.size(), std::nullopt};
      if (!t.oracle_unparsable) ci.actual = t.oracle_apis.size();
      counts.push_back(ci);
      RecallInput ri{task, {t.oracle_apis.begin(), t.oracle_apis.end()}, retrieved, {}, passed.contains(task),
                     oracle_passed.contains(task)};
      for (const ApiUnit* u : oracle_ptrs(t, table)) {
        if (t.context_block.find(u->body) != std::string::npos) ri.in_context.insert(u->id);
      }
      recalls.push_back(std::move(ri));
    }
    auto count_report = api_count_comparison(counts);
    auto recall_report = recall_metrics(recalls);
    tables += fmt::format("\nRetrieved API count vs invoked (Higher / Equal / Lower, percent; {} excluded)\n{}\n",
                          count_report.excluded, render_count_row(count_report));
    tables += fmt::format("\nAPI recall (Recall / BRecall / CRecall, percent; {} tasks, {} excluded)\n{}\n",
                          recall_report.tasks, recall_report.excluded, render_recall_row(recall_report));
    summary["recall"] = {{"recall", recall_report.recall}, {"brecall", recall_report.brecall},
                         {"crecall", recall_report.crecall}, {"tasks", recall_report.tasks}};
    summary["counts"] = {{"higher", count_report.higher}, {"equal", count_report.equal},
                         {"lower", count_report.lower}, {"excluded", count_report.excluded}};
  }

  fs::create_directories(paths.reports_dir());
  write_file_atomic(paths.reports_dir() / "tables.txt", tables);
  write_file_atomic(paths.reports_dir() / "details.txt", details);
  write_file_atomic(paths.reports_dir() / "summary.json", summary.dump(2) + "\n");
  if (mode == "none") return "";
  if (mode == "tables") return tables;
  return tables + details;
}

int cmd_eval(const RunConfig& c, const std::string& report_mode, std::ostream& out) {
  if (report_mode != "all" && report_mode != "tables" && report_mode != "none") {
    throw Error(ErrorKind::Config, "--report must be all, tables or none");
  }
  validate_config(c, true, true);
  RunPaths paths{c.paths.run_dir};
  RunLock lock(paths.root);
  require_index(paths);
  auto records = load_records(paths);
  if (records.empty()) {
    throw Error(ErrorKind::Precondition,
                fmt::format("no generation records under {}; run `alliance generate` first", paths.records_dir().string()));
  }
  CommandScope scope(paths, c, "eval");
  CorpusManifest manifest = load_indexed_manifest(paths);
  ApiTable table = read_api_table(paths.index_dir() / "api_units.jsonl");
  auto tasks = load_tasks(c.paths.benchmark_dir, manifest, table);
  std::map<std::string, const GenerationTask*> by_id;
  for (const auto& t : tasks) by_id[t.task_id] = &t;

  SandboxConfig sandbox;
  sandbox.corpus_root = c.paths.corpus_root;
  sandbox.timeout = std::chrono::milliseconds(c.sandbox.timeout_ms);
  sandbox.memory_bytes = static_cast<std::size_t>(c.sandbox.memory_mb) << 20;
  sandbox.isolate_network = c.sandbox.isolate_network;
  std::string before = directory_hash(sandbox.corpus_root);

  std::vector<Job> jobs;
  std::size_t skipped = 0;
  for (const auto& [cond, per_task] : records) {
    for (const auto& [task, recs] : per_task) {
      if (!by_id.contains(task)) throw Error(ErrorKind::Precondition, "records reference unknown task " + task);
      auto have = present_samples(paths.verdicts_file(cond, task));
      for (const auto& r : recs) {
        if (have.contains(r.sample_index)) {
          ++skipped;
        } else {
          jobs.push_back({cond, by_id[task], &r});
        }
      }
    }
  }

  std::vector<std::optional<ExecutionVerdict>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = execute_candidate(jobs[i].record->candidate, *jobs[i].task, sandbox);
      } catch (...) {
        std::lock_guard lk(mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < c.sandbox.workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::map<std::string, std::size_t> by_status;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& j = jobs[i];
    append_jsonl(paths.verdicts_file(j.condition, j.task->task_id),
                 {{"task_id", j.task->task_id},
                  {"condition", j.condition},
                  {"sample_index", j.record->sample_index},
                  {"verdict", to_json(*results[i])}});
    ++by_status[std::string(to_string(results[i]->status))];
  }
  if (directory_hash(sandbox.corpus_root) != before) {
    throw Error(ErrorKind::Environment, "corpus changed during evaluation: " + sandbox.corpus_root.string());
  }
  out << fmt::format("{} candidates executed, {} already evaluated\n", jobs.size(), skipped);
  for (const auto& [status, n] : by_status) out << fmt::format("  {}: {}\n", status, n);
  out << build_reports(paths, tasks, table, report_mode);
  scope.count("verdicts_written", jobs.size());
  scope.count("verdicts_skipped", skipped);
  scope.done();
  return 0;
}

// ---------------------------------------------------------------- report

int cmd_report(const std::vector<std::string>& run_dirs, std::ostream& out, std::ostream& err) {
  if (run_dirs.empty()) throw Error(ErrorKind::Config, "report needs at least one run directory");
  struct Run {
    std::string label;
    VerdictTable table;
  };
  std::vector<Run> runs;
  for (const auto& dir : run_dirs) {
    RunPaths paths{dir};
    VerdictTable t = load_verdicts(paths);
    if (t.empty()) {
      throw Error(ErrorKind::Precondition, fmt::format("{} has no verdicts; run `alliance eval` first", dir));
    }
    runs.push_back({fs::path(dir).lexically_normal().filename().string(), std::move(t)});
    if (runs.back().label.empty()) runs.back().label = dir;
  }
  std::optional<std::set<std::string>> common;
  bool mismatch = false;
  for (const auto& r : runs) {
    for (const auto& [_, tasks] : r.table) {
      std::set<std::string> ids;
      for (const auto& [id, __] : tasks) ids.insert(id);
      if (!common) {
        common = ids;
        continue;
      }
      if (ids != *common) mismatch = true;
      std::set<std::string> both;
      std::set_intersection(common->begin(), common->end(), ids.begin(), ids.end(), std::inserter(both, both.end()));
      *common = std::move(both);
    }
  }
  if (mismatch) {
    err << fmt::format("warning: runs cover different tasks; comparing the {} tasks they share\n", common->size());
  }
  if (common->empty()) throw Error(ErrorKind::Precondition, "the runs share no tasks");
  std::size_t n = SIZE_MAX;
  for (const auto& r : runs) {
    for (const auto& [_, tasks] : r.table) {
      for (const auto& [id, v] : tasks) {
        if (common->contains(id)) n = std::min(n, v.size());
      }
    }
  }
  std::vector<int> ks;
  for (int k : {1, 3, 5}) {
    if (static_cast<std::size_t>(k) <= n) ks.push_back(k);
  }
  std::vector<PassAtKRow> rows;
  for (const auto& r : runs) {
    for (const auto& [cond, tasks] : r.table) {
      rows.push_back(pass_row(runs.size() > 1 ? r.label + "/" + cond : cond, tasks, ks, &*common));
    }
  }
  out << fmt::format("Pass@k over {} tasks (best per column marked *)\n", common->size());
  out << render_pass_at_k_table(rows, ks);
  return 0;
}

// ---------------------------------------------------------------- cache

int cmd_cache(const std::string& action, const std::string& cache_file, const std::string& out_file,
              const std::string& stage, std::ostream& out) {
  if (cache_file.empty()) throw Error(ErrorKind::Config, "cache needs --cache <file> or --run-dir");
  if (!fs::exists(cache_file)) throw Error(ErrorKind::Config, "cache file not found: " + cache_file);
  ReplayCache cache(cache_file);
  std::optional<StageTag> only;
  if (!stage.empty()) only = stage_from_string(stage);
  if (action == "inspect") {
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_stage;
    for (const auto& e : cache.entries()) {
      auto& [n, tokens] = per_stage[std::string(to_string(e.stage))];
      ++n;
      tokens += e.prompt_tokens + e.completion_tokens;
    }
    out << fmt::format("{}: {} entries\n", cache_file, cache.size());
    for (const auto& [s, v] : per_stage) {
      if (only && s != to_string(*only)) continue;
      out << fmt::format("  {:<14}{:>6} entries {:>9} tokens\n", s, v.first, v.second);
    }
    return 0;
  }
  if (out_file.empty()) throw Error(ErrorKind::Config, "cache export needs --out <file>");
  std::vector<json> rows;
  for (const auto& e : cache.entries()) {
    if (!only || e.stage == *only) rows.push_back(to_json(e));
  }
  write_jsonl(out_file, rows);
  out << fmt::format("exported {} entries to {}\n", rows.size(), out_file);
  return 0;
}

}  // namespace

// ---------------------------------------------------------------- persistence

CorpusManifest load_indexed_manifest(const RunPaths& paths) {
  return read_manifest(paths.index_dir() / "manifest.jsonl");
}

RepositoryIndex load_repository_index(const RunPaths& paths, int window_size, int stride) {
  RepositoryIndex idx;
  CorpusManifest manifest = load_indexed_manifest(paths);
  idx.table = read_api_table(paths.index_dir() / "api_units.jsonl");
  for (const auto& row : read_jsonl(paths.index_dir() / "descriptions.jsonl")) {
    idx.descriptions.push_back(api_description_from_json(row));
  }
  idx.description_index = VectorIndex::load(paths.index_dir() / "description_index.alvx");
  idx.code_index = VectorIndex::load(paths.index_dir() / "code_index.alvx");
  idx.window_index = VectorIndex::load(paths.index_dir() / "window_index.alvx");
  for (const auto& f : manifest.files) {
    auto ws = chunk_windows(f, window_size, stride);
    idx.windows.insert(idx.windows.end(), ws.begin(), ws.end());
  }
  return idx;
}

std::map<std::string, std::map<std::string, std::vector<GenerationRecord>>> load_records(const RunPaths& paths) {
  std::map<std::string, std::map<std::string, std::vector<GenerationRecord>>> out;
  if (!fs::is_directory(paths.records_dir())) return out;
  for (const auto& cdir : fs::directory_iterator(paths.records_dir())) {
    if (!cdir.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(cdir.path())) {
      if (f.path().extension() != ".jsonl") continue;
      auto& recs = out[cdir.path().filename().string()][f.path().stem().string()];
      for (const auto& row : read_jsonl(f.path())) recs.push_back(generation_record_from_json(row));
      std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.sample_index < b.sample_index; });
    }
  }
  return out;
}

VerdictTable load_verdicts(const RunPaths& paths) {
  VerdictTable out;
  if (!fs::is_directory(paths.verdicts_dir())) return out;
  for (const auto& cdir : fs::directory_iterator(paths.verdicts_dir())) {
    if (!cdir.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(cdir.path())) {
      if (f.path().extension() != ".jsonl") continue;
      std::vector<std::pair<int, VerdictStatus>> rows;
      for (const auto& row : read_jsonl(f.path())) {
        rows.emplace_back(row.at("sample_index").get<int>(),
                          verdict_status_from_string(row.at("verdict").at("status").get<std::string>()));
      }
      std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      auto& v = out[cdir.path().filename().string()][f.path().stem().string()];
      for (const auto& [_, s] : rows) v.push_back(s);
    }
  }
  return out;
}

// ---------------------------------------------------------------- entry point

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieval-augmented repository-level code generation", "alliance"};
  app.footer(std::string(kEnvHelp));
  app.require_subcommand(1);

  Overrides o;
  auto* index = app.add_subcommand("index", "Scan the corpus, describe every API and build the vector indexes");
  add_common(index, o);
  index->add_option("--api-source", o.api_source, "text_description or raw_code");

  auto* generate = app.add_subcommand("generate", "Generate candidates for the selected tasks and conditions");
  add_common(generate, o);
  generate->add_option("--condition", o.conditions,
                       "Condition name, 'all8' for the study matrix or 'all' (repeatable)");
  generate->add_option("--task", o.tasks, "Task id (repeatable; default every task)");
  generate->add_option("-k,--samples", o.k, "Samples per task");
  generate->add_option("--api-source", o.api_source, "text_description or raw_code");

  auto* eval = app.add_subcommand("eval", "Execute candidates in the sandbox and write reports");
  add_common(eval, o);
  eval->add_option("--timeout-ms", o.timeout_ms, "Per test command timeout");
  eval->add_option("--workers", o.workers, "Parallel sandbox executions");
  eval->add_option("--report", o.report, "all, tables or none");

  std::vector<std::string> report_dirs;
  auto* report = app.add_subcommand("report", "Compare Pass@k across evaluated run directories");
  report->add_option("runs", report_dirs, "Evaluated run directories")->required();

  std::string action, cache_file, out_file, stage, cache_run_dir;
  auto* cache = app.add_subcommand("cache", "Inspect or export a replay cache");
  cache->add_option("action", action, "inspect or export")->required()->check(CLI::IsMember({"inspect", "export"}));
  cache->add_option("--cache", cache_file, "Cache file");
  cache->add_option("--run-dir", cache_run_dir, "Use the cache named by this run's config");
  cache->add_option("--out", out_file, "Export destination");
  cache->add_option("--stage", stage, "Only entries of this stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (index->parsed()) return cmd_index(resolve_config(o), out);
    if (generate->parsed()) return cmd_generate(resolve_config(o), o.tasks, out);
    if (eval->parsed()) return cmd_eval(resolve_config(o), o.report, out);
    if (report->parsed()) return cmd_report(report_dirs, out, err);
    if (cache->parsed()) {
      if (cache_file.empty() && !cache_run_dir.empty()) {
        Overrides co;
        co.run_dir = cache_run_dir;
        cache_file = resolve_config(co).cache_path().string();
      }
      return cmd_cache(action, cache_file, out_file, stage, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"alliance"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace alliance
