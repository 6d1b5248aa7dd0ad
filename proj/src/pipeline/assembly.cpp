#include <fmt/format.h>

#include "alliance/error.hpp"
#include "alliance/pipeline.hpp"

namespace alliance {

namespace {

const std::vector<Condition> kConditions = {
    {"Pure", false, false, false, ApiSource::Oracle},
    {"Context", true, false, false, ApiSource::Oracle},
    {"Similar", false, true, false, ApiSource::Oracle},
    {"API", false, false, true, ApiSource::Oracle},
    {"ConSim", true, true, false, ApiSource::Oracle},
    {"ConAPI", true, false, true, ApiSource::Oracle},
    {"SimAPI", false, true, true, ApiSource::Oracle},
    {"ConSimAPI", true, true, true, ApiSource::Oracle},
    {"AllianceCoder", true, false, true, ApiSource::Predicted},
};

std::string render_unit(const ApiUnit& u, bool with_body) {
  std::string out = fmt::format("## {}{}\n", u.qualified_name, u.signature);
  if (u.doc) out += fmt::format("# doc: {}\n", *u.doc);
  if (with_body) {
    out += u.body;
    if (!out.ends_with('\n')) out += '\n';
  }
  return out;
}

PromptBlock api_block(const Condition& c, std::span<const ApiUnit> apis, std::size_t bodies) {
  PromptBlock b;
  b.kind = BlockKind::Api;
  const char* source = c.api_source == ApiSource::Oracle ? "oracle" : "predicted";
  b.label = fmt::format("api({})", source);
  b.text = "# Repository APIs that may be useful\n";
  for (std::size_t i = 0; i < apis.size(); ++i) {
    b.text += render_unit(apis[i], i < bodies);
    b.items.push_back(apis[i].id);
  }
  b.truncated = bodies < apis.size();
  return b;
}

PromptBlock similar_block(std::span<const SimilarWindow> similar, std::size_t keep) {
  PromptBlock b;
  b.kind = BlockKind::Similar;
  b.label = "similar";
  b.text = "# Similar code from the repository\n";
  for (std::size_t i = 0; i < similar.size() && i < keep; ++i) {
    const CodeWindow& w = similar[i].window;
    b.text += fmt::format("## {}:{}-{}\n{}", w.path, w.start_line, w.end_line, w.text);
    if (!b.text.ends_with('\n')) b.text += '\n';
    b.items.push_back(w.key());
  }
  b.truncated = keep < similar.size();
  return b;
}

}  // namespace

const std::vector<Condition>& all_conditions() { return kConditions; }

std::span<const Condition> study_conditions() { return {kConditions.data(), 8}; }

const Condition& condition_by_name(std::string_view name) {
  for (const auto& c : kConditions) {
    if (c.name == name) return c;
  }
  std::string names;
  for (const auto& c : kConditions) names += (names.empty() ? "" : ", ") + c.name;
  throw Error(ErrorKind::Config, fmt::format("unknown condition {} (expected one of {})", name, names));
}

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::Api:
      return "api";
    case BlockKind::Similar:
      return "similar";
    case BlockKind::Context:
      return "context";
    case BlockKind::Query:
      return "query";
  }
  return "?";
}

std::string PromptBundle::text() const {
  std::string out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i > 0) out += '\n';
    out += blocks[i].text;
  }
  return out;
}

std::string PromptBundle::signature() const {
  std::string out;
  for (const auto& b : blocks) out += (out.empty() ? "" : "+") + b.label;
  return out;
}

const PromptBlock* PromptBundle::find(BlockKind kind) const {
  for (const auto& b : blocks) {
    if (b.kind == kind) return &b;
  }
  return nullptr;
}

PromptBundle assemble_prompt(const Condition& condition, const GenerationTask& task,
                             std::optional<std::span<const ApiUnit>> apis,
                             std::optional<std::span<const SimilarWindow>> similar, std::size_t token_budget) {
  if (condition.use_api != apis.has_value()) {
    throw Error(ErrorKind::Assembly, fmt::format("condition {} {} an API set", condition.name,
                                                 condition.use_api ? "requires" : "does not take"));
  }
  if (condition.use_similar != similar.has_value()) {
    throw Error(ErrorKind::Assembly, fmt::format("condition {} {} similar windows", condition.name,
                                                 condition.use_similar ? "requires" : "does not take"));
  }

  PromptBlock context;
  context.kind = BlockKind::Context;
  context.label = "context";
  context.text = fmt::format("# Code preceding the target function in {}\n{}", task.target_path, task.context_block);
  if (!context.text.ends_with('\n')) context.text += '\n';

  PromptBlock query;
  query.kind = BlockKind::Query;
  query.label = "query";
  query.text = fmt::format("# Task\n{}\n", task.query);

  std::size_t bodies = apis ? apis->size() : 0;
  std::size_t windows = similar ? similar->size() : 0;
  auto build = [&] {
    PromptBundle p;
    if (apis && !apis->empty()) p.blocks.push_back(api_block(condition, *apis, bodies));
    if (similar) p.blocks.push_back(similar_block(*similar, windows));
    if (condition.use_context) p.blocks.push_back(context);
    p.blocks.push_back(query);
    p.token_estimate = estimate_tokens(p.text());
    return p;
  };
  PromptBundle p = build();
  if (token_budget == 0) return p;
  while (p.token_estimate > token_budget && bodies > 0) {
    --bodies;
    p = build();
  }
  while (p.token_estimate > token_budget && windows > 0) {
    --windows;
    p = build();
  }
  return p;
}

}  // namespace alliance
