#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "alliance/error.hpp"
#include "alliance/jsonl.hpp"
#include "alliance/llm.hpp"

namespace alliance {

namespace {

const PromptTemplate kTemplates[] = {
    {StageTag::ApiDescribe, 1,
     "You document Python code. Reply with a single plain sentence, no code.",
     "Describe what the following function does in one sentence, focusing on its purpose, inputs and "
     "result.\n\n"
     "Name: {qualified_name}\n"
     "Signature: {signature}\n"
     "Docstring: {doc}\n"
     "Source:\n{body}\n"},
    {StageTag::Steps, 1,
     "You plan Python functions. Break a task into short, concrete implementation steps.",
     "Decompose the task into a numbered list of implementation steps, one step per line, formatted as "
     "\"1. <step>\". Reply with the list only.\n\n"
     "{examples}"
     "Task:\n{query}\n"},
    {StageTag::ApiDescs, 1,
     "You predict which helper functions an implementation would call.",
     "For each implementation step, describe the functionality of any repository API that the step would "
     "call. Reply with one line per API in the form \"<step number>: <description>\". When a step needs no "
     "repository API, reply \"<step number>: NONE\".\n\n"
     "{examples}"
     "Steps:\n{steps}\n"},
    {StageTag::Extend, 1,
     "You refine API descriptions so that each describes exactly one capability.",
     "Some of the following API descriptions combine several capabilities. Split each combined "
     "description into atomic descriptions, one capability each, and keep the atomic ones as they are. "
     "Reply with a bullet list, one description per line starting with \"- \".\n\n"
     "Descriptions:\n{descriptions}\n"},
    {StageTag::Generate, 1,
     "You are an expert Python developer completing a function inside an existing repository.",
     "{prompt}\n\n"
     "Write the complete function definition. Reply with a single ```python fenced block.\n"},
};

const std::vector<PromptExample> kDefaultExamples = {
    {"steps-01", StageTag::Steps,
     "Task:\nReturn the number of words in the file at the given path.\n"
     "Steps:\n1. Read the whole file into a string.\n2. Split the string on whitespace.\n"
     "3. Return the length of the resulting list.\n"},
    {"steps-02", StageTag::Steps,
     "Task:\nStore a user record and return its generated identifier.\n"
     "Steps:\n1. Validate that the record has a name.\n2. Insert the record into the table.\n"
     "3. Return the identifier produced by the insert.\n"},
    {"api_descs-01", StageTag::ApiDescs,
     "Steps:\n1. Read the whole file into a string.\n2. Split the string on whitespace.\n"
     "3. Return the length of the resulting list.\n"
     "APIs:\n1: read the contents of a text file\n2: NONE\n3: NONE\n"},
    {"api_descs-02", StageTag::ApiDescs,
     "Steps:\n1. Validate that the record has a name.\n2. Insert the record into the table.\n"
     "3. Return the identifier produced by the insert.\n"
     "APIs:\n1: NONE\n2: insert a row into a database table and return its id\n3: NONE\n"},
};

bool slot_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string render_examples(StageTag stage, std::span<const PromptExample> examples) {
  std::vector<const PromptExample*> sorted;
  for (const auto& e : examples) {
    if (e.stage != stage) {
      throw Error(ErrorKind::Template, fmt::format("example {} is tagged {} but spliced into {}", e.example_id,
                                                   to_string(e.stage), to_string(stage)));
    }
    sorted.push_back(&e);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const PromptExample* a, const PromptExample* b) { return a->example_id < b->example_id; });
  std::string out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    out += fmt::format("Example {}:\n{}", i + 1, sorted[i]->body);
    if (!out.ends_with('\n')) out += '\n';
    out += '\n';
  }
  return out;
}

std::string substitute(std::string_view text, const std::map<std::string, std::string>& bindings) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if ((c == '{' || c == '}') && i + 1 < text.size() && text[i + 1] == c) {
      out += c;
      ++i;
      continue;
    }
    if (c != '{') {
      out += c;
      continue;
    }
    std::size_t j = i + 1;
    while (j < text.size() && slot_char(text[j])) ++j;
    if (j >= text.size() || text[j] != '}' || j == i + 1) {
      out += c;
      continue;
    }
    std::string slot(text.substr(i + 1, j - i - 1));
    auto it = bindings.find(slot);
    if (it == bindings.end()) throw Error(ErrorKind::Template, "missing slot: " + slot);
    out += it->second;
    i = j;
  }
  return out;
}

}  // namespace

const PromptTemplate& template_for(StageTag stage) { return kTemplates[static_cast<int>(stage)]; }

std::string template_version(StageTag stage) {
  return fmt::format("{}@v{}", to_string(stage), template_for(stage).version);
}

std::map<std::string, std::string> template_versions() {
  std::map<std::string, std::string> out;
  for (const auto& t : kTemplates) out[std::string(to_string(t.stage))] = template_version(t.stage);
  return out;
}

std::vector<PromptExample> default_examples(StageTag stage) {
  std::vector<PromptExample> out;
  for (const auto& e : kDefaultExamples) {
    if (e.stage == stage) out.push_back(e);
  }
  return out;
}

std::vector<PromptExample> load_examples(const std::filesystem::path& jsonl_file) {
  std::vector<PromptExample> out;
  for (const auto& row : read_jsonl(jsonl_file)) {
    out.push_back({row.at("example_id").get<std::string>(), stage_from_string(row.at("stage_tag").get<std::string>()),
                   row.at("body").get<std::string>()});
  }
  return out;
}

std::vector<ChatMessage> render_template(StageTag stage, const std::map<std::string, std::string>& bindings,
                                         std::span<const PromptExample> examples) {
  const PromptTemplate& t = template_for(stage);
  std::map<std::string, std::string> all = bindings;
  if (t.user.find("{examples}") != std::string::npos && !all.contains("examples")) {
    all["examples"] = render_examples(stage, examples);
  }
  return {{"system", substitute(t.system, all)}, {"user", substitute(t.user, all)}};
}

}  // namespace alliance
