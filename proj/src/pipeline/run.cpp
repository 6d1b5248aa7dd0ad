#include <fmt/format.h>

#include "alliance/error.hpp"
#include "alliance/pipeline.hpp"

namespace alliance {

using nlohmann::json;

namespace {

json optional_json(const auto& v) { return v ? json(*v) : json(nullptr); }

json block_json(const PromptBlock& b) {
  return {{"kind", to_string(b.kind)}, {"label", b.label}, {"text", b.text}, {"items", b.items},
          {"truncated", b.truncated}};
}

BlockKind block_kind_from_string(std::string_view s) {
  for (BlockKind k : {BlockKind::Api, BlockKind::Similar, BlockKind::Context, BlockKind::Query}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorKind::Parse, "unknown prompt block kind: " + std::string(s));
}

json steps_json(std::span<const ImplementationStep> steps) {
  json out = json::array();
  for (const auto& s : steps) out.push_back({{"index", s.index}, {"text", s.text}});
  return out;
}

json descriptions_json(std::span<const ApiDescription> ds) {
  json out = json::array();
  for (const auto& d : ds) out.push_back(to_json(d));
  return out;
}

std::vector<ApiDescription> descriptions_from_json(const json& j) {
  std::vector<ApiDescription> out;
  for (const auto& d : j) out.push_back(api_description_from_json(d));
  return out;
}

std::vector<GenerationRecord> sample(const GenerationTask& task, const std::string& condition,
                                     const PromptBundle& prompt, const std::optional<ApiRetrievalSet>& retrieved,
                                     const std::optional<AllianceArtifacts>& artifacts, const RunContext& ctx) {
  std::vector<GenerationRecord> out;
  const auto messages = render_template(StageTag::Generate, {{"prompt", prompt.text()}});
  for (int i = 1; i <= ctx.opts.k_samples; ++i) {
    GenerationRecord r;
    r.task_id = task.task_id;
    r.condition = condition;
    r.sample_index = i;
    r.prompt = prompt;
    r.retrieved_apis = retrieved;
    r.artifacts = artifacts;
    try {
      r.completion = ctx.gateway.complete(make_request(StageTag::Generate, messages, ctx.opts, i)).text;
      r.candidate = extract_code(r.completion);
      if (!r.candidate) r.failure = "candidate_unparsable";
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Provider) throw;
      r.failure = fmt::format("llm_failure: {}", e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

json to_json(const ApiDescription& d) {
  return {{"description_id", d.description_id}, {"text", d.text}, {"stage", to_string(d.stage)},
          {"origin_step", optional_json(d.origin_step)}, {"api_id", optional_json(d.api_id)},
          {"degraded", d.degraded}};
}

ApiDescription api_description_from_json(const json& j) {
  ApiDescription d;
  d.description_id = j.at("description_id").get<std::string>();
  d.text = j.at("text").get<std::string>();
  d.stage = description_stage_from_string(j.at("stage").get<std::string>());
  if (j.contains("origin_step") && !j["origin_step"].is_null()) d.origin_step = j["origin_step"].get<int>();
  if (j.contains("api_id") && !j["api_id"].is_null()) d.api_id = j["api_id"].get<std::string>();
  d.degraded = j.value("degraded", false);
  return d;
}

json to_json(const ApiRetrievalSet& s) {
  json pairs = json::array();
  for (const auto& p : s.pairs) {
    pairs.push_back({{"description_id", p.description_id}, {"api_id", p.api_id}, {"score", p.score}});
  }
  return {{"pairs", pairs}, {"dedup", s.dedup}};
}

ApiRetrievalSet api_retrieval_set_from_json(const json& j) {
  ApiRetrievalSet s;
  for (const auto& p : j.at("pairs")) {
    s.pairs.push_back({p.at("description_id").get<std::string>(), p.at("api_id").get<std::string>(),
                       p.at("score").get<double>()});
  }
  s.dedup = j.at("dedup").get<std::vector<std::string>>();
  return s;
}

json to_json(const GenerationRecord& r) {
  json blocks = json::array();
  for (const auto& b : r.prompt.blocks) blocks.push_back(block_json(b));
  json j = {{"schema_version", GenerationRecord::kSchemaVersion},
            {"task_id", r.task_id},
            {"condition", r.condition},
            {"sample_index", r.sample_index},
            {"prompt",
             {{"signature", r.prompt.signature()}, {"token_estimate", r.prompt.token_estimate}, {"blocks", blocks}}},
            {"completion", r.completion},
            {"candidate", nullptr},
            {"failure", optional_json(r.failure)},
            {"retrieved_apis", nullptr},
            {"artifacts", nullptr}};
  if (r.candidate) j["candidate"] = {{"source", r.candidate->source}, {"method", to_string(r.candidate->method)}};
  if (r.retrieved_apis) j["retrieved_apis"] = to_json(*r.retrieved_apis);
  if (r.artifacts) {
    j["artifacts"] = {{"steps", steps_json(r.artifacts->steps)},
                      {"steps_degraded", r.artifacts->steps_degraded},
                      {"predicted", descriptions_json(r.artifacts->predicted)},
                      {"extended", descriptions_json(r.artifacts->extended)}};
  }
  return j;
}

GenerationRecord generation_record_from_json(const json& j) {
  int version = j.value("schema_version", 0);
  if (version != GenerationRecord::kSchemaVersion) {
    throw Error(ErrorKind::Parse, fmt::format("unsupported record schema version {}", version));
  }
  GenerationRecord r;
  r.task_id = j.at("task_id").get<std::string>();
  r.condition = j.at("condition").get<std::string>();
  r.sample_index = j.at("sample_index").get<int>();
  const json& p = j.at("prompt");
  r.prompt.token_estimate = p.at("token_estimate").get<std::size_t>();
  for (const auto& b : p.at("blocks")) {
    r.prompt.blocks.push_back({block_kind_from_string(b.at("kind").get<std::string>()), b.at("label").get<std::string>(),
                               b.at("text").get<std::string>(), b.at("items").get<std::vector<std::string>>(),
                               b.at("truncated").get<bool>()});
  }
  r.completion = j.at("completion").get<std::string>();
  if (!j.at("candidate").is_null()) {
    r.candidate = CodeCandidate{j["candidate"].at("source").get<std::string>(),
                                extraction_method_from_string(j["candidate"].at("method").get<std::string>())};
  }
  if (!j.at("failure").is_null()) r.failure = j["failure"].get<std::string>();
  if (!j.at("retrieved_apis").is_null()) r.retrieved_apis = api_retrieval_set_from_json(j["retrieved_apis"]);
  if (!j.at("artifacts").is_null()) {
    const json& a = j["artifacts"];
    AllianceArtifacts art;
    for (const auto& s : a.at("steps")) art.steps.push_back({s.at("index").get<int>(), s.at("text").get<std::string>()});
    art.steps_degraded = a.at("steps_degraded").get<bool>();
    art.predicted = descriptions_from_json(a.at("predicted"));
    art.extended = descriptions_from_json(a.at("extended"));
    r.artifacts = std::move(art);
  }
  return r;
}

RepositoryIndex build_repository_index(const CorpusManifest& manifest, ApiTable table,
                                       std::vector<ApiDescription> descriptions, EmbeddingProvider& embedder,
                                       int window_size, int stride) {
  RepositoryIndex idx;
  std::vector<std::pair<std::string, Vector>> desc_vectors;
  for (auto& d : descriptions) {
    if (!d.vector) d.vector = embedder.embed(d.text);
    desc_vectors.emplace_back(d.description_id, *d.vector);
  }
  idx.description_index =
      VectorIndex::from_vectors(embedder.id(), embedder.dim(), SourceMode::TextDescription, desc_vectors);
  std::vector<IndexItem> code_items;
  for (const auto& u : table.units) code_items.push_back({u.id, u.body});
  idx.code_index = VectorIndex::build(code_items, embedder, SourceMode::RawCode);
  for (const auto& f : manifest.files) {
    auto ws = chunk_windows(f, window_size, stride);
    idx.windows.insert(idx.windows.end(), ws.begin(), ws.end());
  }
  std::vector<IndexItem> window_items;
  for (const auto& w : idx.windows) window_items.push_back({w.key(), w.text});
  idx.window_index = VectorIndex::build(window_items, embedder, SourceMode::RawCode);
  idx.table = std::move(table);
  idx.descriptions = std::move(descriptions);
  return idx;
}

std::vector<ApiUnit> oracle_units(const GenerationTask& task, const ApiTable& table) {
  std::vector<ApiUnit> out;
  for (const auto& id : task.oracle_apis) {
    const ApiUnit* u = table.by_id(id);
    if (u == nullptr) throw Error(ErrorKind::Precondition, "oracle API " + id + " is not in the API table");
    out.push_back(*u);
  }
  return out;
}

std::vector<GenerationRecord> run_condition(const GenerationTask& task, const Condition& condition,
                                            const RunContext& ctx) {
  if (condition.api_source == ApiSource::Predicted) return run_alliancecoder(task, ctx);
  std::optional<std::vector<ApiUnit>> apis;
  if (condition.use_api) apis = oracle_units(task, ctx.index.table);
  std::optional<std::vector<SimilarWindow>> similar;
  if (condition.use_similar) {
    similar.emplace();
    if (!ctx.index.window_index.empty()) {
      Vector key = ctx.embedder.embed(task.reference_solution);
      *similar = retrieve_similar(key, ctx.index.window_index, ctx.index.windows, task.target_path, task.target_span,
                                  ctx.opts.top_k_similar);
    }
  }
  std::optional<std::span<const ApiUnit>> api_span;
  if (apis) api_span = std::span<const ApiUnit>(*apis);
  std::optional<std::span<const SimilarWindow>> sim_span;
  if (similar) sim_span = std::span<const SimilarWindow>(*similar);
  PromptBundle prompt = assemble_prompt(condition, task, api_span, sim_span, ctx.opts.token_budget);
  return sample(task, condition.name, prompt, std::nullopt, std::nullopt, ctx);
}

AllianceRetrieval alliance_retrieve(const GenerationTask& task, const RunContext& ctx) {
  AllianceRetrieval out;
  StepsResult steps = generate_steps(task.query, ctx.gateway, ctx.opts);
  out.artifacts.steps = std::move(steps.steps);
  out.artifacts.steps_degraded = steps.degraded;
  out.artifacts.predicted = generate_api_descriptions(out.artifacts.steps, ctx.gateway, ctx.opts);
  out.artifacts.extended = extend_api_descriptions(out.artifacts.predicted, ctx.gateway, ctx.opts);
  const VectorIndex& index = ctx.index.api_index(ctx.api_mode);
  if (!index.empty() && index.provider_id() != ctx.embedder.id()) {
    throw Error(ErrorKind::Config, fmt::format("API index was built with {} but the run embeds with {}",
                                               index.provider_id(), ctx.embedder.id()));
  }
  std::vector<ApiDescription> embedded = out.artifacts.extended;
  for (auto& d : embedded) d.vector = ctx.embedder.embed(d.text);
  out.retrieved = retrieve_apis(embedded, index, task.target_unit_id);
  return out;
}

std::vector<GenerationRecord> run_alliancecoder(const GenerationTask& task, const RunContext& ctx) {
  const Condition& condition = condition_by_name("AllianceCoder");
  AllianceRetrieval r = alliance_retrieve(task, ctx);
  std::vector<ApiUnit> apis;
  for (const auto& id : r.retrieved.dedup) {
    const ApiUnit* u = ctx.index.table.by_id(id);
    if (u == nullptr) throw Error(ErrorKind::Precondition, "retrieved API " + id + " is not in the API table");
    apis.push_back(*u);
  }
  PromptBundle prompt =
      assemble_prompt(condition, task, std::span<const ApiUnit>(apis), std::nullopt, ctx.opts.token_budget);
  return sample(task, condition.name, prompt, r.retrieved, r.artifacts, ctx);
}

}  // namespace alliance
