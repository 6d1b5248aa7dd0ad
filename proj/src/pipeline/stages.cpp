#include <regex>
#include <set>

#include <fmt/format.h>

#include "alliance/error.hpp"
#include "alliance/jsonl.hpp"
#include "alliance/pipeline.hpp"

namespace alliance {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_none(std::string_view text) {
  std::string t = trim(text);
  while (!t.empty() && (t.back() == '.' || t.back() == '!')) t.pop_back();
  for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return t == "none" || t == "n/a";
}

constexpr std::string_view kStrictReminder =
    "\n\nFormat strictly as a numbered list, one step per line, for example:\n"
    "1. <first step>\n2. <second step>\n";

}  // namespace

ChatRequest make_request(StageTag stage, std::vector<ChatMessage> messages, const PipelineOptions& opts,
                         int sample_index) {
  ChatRequest r;
  r.model = opts.model;
  r.messages = std::move(messages);
  r.temperature = opts.temperature;
  r.max_tokens = opts.max_tokens;
  r.stage = stage;
  r.template_version = template_version(stage);
  r.sample_index = sample_index;
  return r;
}

std::vector<ApiDescription> describe_repository_apis(const ApiTable& table, Gateway& gateway,
                                                     EmbeddingProvider& embedder, const PipelineOptions& opts) {
  std::vector<ApiDescription> out;
  out.reserve(table.units.size());
  for (const auto& u : table.units) {
    ApiDescription d;
    d.description_id = u.id;
    d.api_id = u.id;
    d.stage = DescriptionStage::Repo;
    auto messages = render_template(StageTag::ApiDescribe, {{"qualified_name", u.qualified_name},
                                                            {"signature", u.signature},
                                                            {"doc", u.doc.value_or("(none)")},
                                                            {"body", u.body}});
    try {
      d.text = trim(gateway.complete(make_request(StageTag::ApiDescribe, std::move(messages), opts)).text);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Provider) throw;
    }
    if (d.text.empty()) {
      d.degraded = true;
      d.text = u.doc ? *u.doc : u.qualified_name + u.signature;
    }
    d.vector = embedder.embed(d.text);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<ImplementationStep> parse_steps(std::string_view completion) {
  static const std::regex re(R"(^\s*(\d+)[.)]\s+(.*\S)\s*$)");
  std::vector<ImplementationStep> steps;
  for (auto line : split_lines(completion)) {
    std::string l(line);
    std::smatch m;
    if (std::regex_match(l, m, re)) {
      steps.push_back({static_cast<int>(steps.size()) + 1, m[2].str()});
    }
  }
  return steps;
}

StepsResult generate_steps(std::string_view query, Gateway& gateway, const PipelineOptions& opts) {
  auto messages = render_template(StageTag::Steps, {{"query", std::string(query)}}, opts.step_examples);
  std::string text = gateway.complete(make_request(StageTag::Steps, messages, opts)).text;
  auto steps = parse_steps(text);
  if (!steps.empty()) return {std::move(steps), false};
  messages.back().content += kStrictReminder;
  text = gateway.complete(make_request(StageTag::Steps, messages, opts)).text;
  steps = parse_steps(text);
  if (!steps.empty()) return {std::move(steps), false};
  return {{{1, trim(query)}}, true};
}

std::string render_steps(std::span<const ImplementationStep> steps) {
  std::string out;
  for (const auto& s : steps) out += fmt::format("{}. {}\n", s.index, s.text);
  return out;
}

std::vector<ApiDescription> parse_api_descriptions(std::string_view completion, int step_count) {
  static const std::regex re(R"(^\s*(?:[Ss]tep\s*)?(\d+)\s*:\s*(.*\S)\s*$)");
  std::vector<ApiDescription> out;
  for (auto line : split_lines(completion)) {
    std::string l(line);
    std::smatch m;
    if (!std::regex_match(l, m, re)) continue;
    int step = std::stoi(m[1].str());
    if (step < 1 || step > step_count || is_none(m[2].str())) continue;
    ApiDescription d;
    d.description_id = fmt::format("p{}", out.size() + 1);
    d.text = m[2].str();
    d.stage = DescriptionStage::Predicted;
    d.origin_step = step;
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<ApiDescription> generate_api_descriptions(std::span<const ImplementationStep> steps, Gateway& gateway,
                                                      const PipelineOptions& opts) {
  if (steps.empty()) throw Error(ErrorKind::Precondition, "API description stage needs at least one step");
  auto messages = render_template(StageTag::ApiDescs, {{"steps", render_steps(steps)}}, opts.api_desc_examples);
  std::string text = gateway.complete(make_request(StageTag::ApiDescs, std::move(messages), opts)).text;
  return parse_api_descriptions(text, static_cast<int>(steps.size()));
}

std::vector<ApiDescription> extend_api_descriptions(std::span<const ApiDescription> descs, Gateway& gateway,
                                                    const PipelineOptions& opts) {
  std::vector<ApiDescription> out;
  std::set<std::string> seen;
  for (const auto& d : descs) {
    if (seen.insert(d.text).second) out.push_back(d);
  }
  if (out.empty()) return out;
  std::string listing;
  for (const auto& d : out) listing += fmt::format("- {}\n", d.text);
  auto messages = render_template(StageTag::Extend, {{"descriptions", listing}});
  std::string text = gateway.complete(make_request(StageTag::Extend, std::move(messages), opts)).text;

  static const std::regex bullet(R"(^\s*(?:[-*]|\d+[.)])\s+(.*\S)\s*$)");
  int added = 0;
  for (auto line : split_lines(text)) {
    std::string l(line);
    std::smatch m;
    if (!std::regex_match(l, m, bullet)) continue;
    std::string t = m[1].str();
    if (!seen.insert(t).second) continue;
    ApiDescription d;
    d.description_id = fmt::format("x{}", ++added);
    d.text = std::move(t);
    d.stage = DescriptionStage::Extended;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace alliance
