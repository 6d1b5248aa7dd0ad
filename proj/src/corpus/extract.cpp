#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "alliance/corpus.hpp"
#include "alliance/error.hpp"
#include "alliance/hashing.hpp"
#include "alliance/jsonl.hpp"
#include "alliance/python_source.hpp"

namespace alliance {

namespace fs = std::filesystem;

namespace {

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  std::string tidy;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] == ' ' && i > 0 && (out[i - 1] == '(' || (i + 1 < out.size() && out[i + 1] == ')'))) {
      continue;
    }
    tidy.push_back(out[i]);
  }
  return tidy;
}

std::string join_lines(const std::vector<std::string_view>& lines, int first, int last) {
  std::string out;
  for (int i = first; i <= last && i <= static_cast<int>(lines.size()); ++i) {
    if (i > first) out.push_back('\n');
    out.append(lines[static_cast<std::size_t>(i - 1)]);
  }
  return out;
}

struct Scope {
  int indent = 0;
  bool is_class = false;
  std::string qualname;
  int unit = -1;
  int end_line = 0;
  bool saw_body = false;
};

// Signature is the parameter list plus an optional return annotation.
std::string signature_of(std::string_view source, const py::Lexed& lx, const py::LogicalLine& l,
                         std::size_t name_tok) {
  std::size_t open = name_tok + 1;
  if (open >= l.token_end || lx.tokens[open].text != "(") return "()";
  int depth = 0;
  std::size_t close = open;
  for (std::size_t t = open; t < l.token_end; ++t) {
    std::string_view s = lx.tokens[t].text;
    if (s == "(" || s == "[" || s == "{") ++depth;
    if (s == ")" || s == "]" || s == "}") --depth;
    if (depth == 0) {
      close = t;
      break;
    }
  }
  std::size_t a = lx.tokens[open].offset;
  std::size_t b = lx.tokens[close].offset + 1;
  std::string sig = collapse_whitespace(source.substr(a, b - a));
  if (close + 1 < l.token_end && lx.tokens[close + 1].text == "->") {
    std::size_t ann_begin = close + 2;
    std::size_t ann_end = l.token_end - 1;  // trailing ':'
    if (ann_begin < ann_end) {
      std::size_t x = lx.tokens[ann_begin].offset;
      std::size_t y = lx.tokens[ann_end - 1].offset + lx.tokens[ann_end - 1].text.size();
      sig += " -> " + collapse_whitespace(source.substr(x, y - x));
    }
  }
  return sig;
}

}  // namespace

std::string module_name_for(std::string_view path) {
  std::string p(path);
  if (p.ends_with(".py")) p.resize(p.size() - 3);
  if (p.ends_with("/__init__")) {
    p.resize(p.size() - 9);
  } else if (p == "__init__") {
    p.clear();
  }
  std::replace(p.begin(), p.end(), '/', '.');
  return p;
}

std::string api_unit_id(std::string_view path, std::string_view qualified_name,
                        std::string_view signature) {
  std::string key;
  key.append(path).push_back('\n');
  key.append(qualified_name).push_back('\n');
  key.append(signature);
  return sha256_hex(key).substr(0, 16);
}

ExtractResult extract_api_units(const SourceFile& file) {
  ExtractResult result;
  py::Lexed lx = py::lex(file.text);
  if (!lx.ok()) {
    result.error = Diagnostic{file.path, fmt::format("line {}: {}", lx.error->line, lx.error->message)};
    return result;
  }
  const std::string module = module_name_for(file.path);
  const auto lines = split_lines(file.text);

  std::vector<Scope> stack;
  int pending_decorator = 0;

  auto close_scope = [&](const Scope& s) {
    if (s.unit < 0) return;
    ApiUnit& u = result.units[static_cast<std::size_t>(s.unit)];
    u.span.end = s.end_line;
    u.body = join_lines(lines, u.span.start, u.span.end);
  };

  for (const py::LogicalLine& l : lx.lines) {
    while (!stack.empty() && l.indent <= stack.back().indent) {
      close_scope(stack.back());
      stack.pop_back();
    }
    for (Scope& s : stack) s.end_line = std::max(s.end_line, l.last_line);

    const py::Token& head = lx.tokens[l.token_begin];
    if (!stack.empty() && !stack.back().saw_body) {
      Scope& parent = stack.back();
      parent.saw_body = true;
      bool all_strings = std::all_of(lx.tokens.begin() + static_cast<long>(l.token_begin),
                                     lx.tokens.begin() + static_cast<long>(l.token_end),
                                     [](const py::Token& t) { return t.kind == py::TokenKind::String; });
      if (all_strings && parent.unit >= 0) {
        result.units[static_cast<std::size_t>(parent.unit)].doc = py::string_literal_value(head.text);
      }
    }

    if (head.kind == py::TokenKind::Op && head.text == "@") {
      if (pending_decorator == 0) pending_decorator = l.first_line;
      continue;
    }
    std::size_t kw = l.token_begin;
    if (head.text == "async" && kw + 1 < l.token_end && lx.tokens[kw + 1].text == "def") ++kw;
    std::string_view word = lx.tokens[kw].text;
    bool is_def = word == "def";
    bool is_class = word == "class";
    if ((!is_def && !is_class) || kw + 1 >= l.token_end ||
        lx.tokens[kw + 1].kind != py::TokenKind::Name) {
      pending_decorator = 0;
      continue;
    }
    std::string name(lx.tokens[kw + 1].text);
    std::string qual = stack.empty() ? (module.empty() ? name : module + "." + name)
                                     : stack.back().qualname + "." + name;
    bool only_classes = std::all_of(stack.begin(), stack.end(), [](const Scope& s) { return s.is_class; });

    Scope scope;
    scope.indent = l.indent;
    scope.is_class = is_class;
    scope.qualname = qual;
    scope.end_line = l.last_line;
    if (is_def && only_classes) {
      ApiUnit u;
      u.qualified_name = qual;
      u.signature = signature_of(file.text, lx, l, kw + 1);
      u.path = file.path;
      u.span = {pending_decorator != 0 ? pending_decorator : l.first_line, l.last_line};
      u.id = api_unit_id(u.path, u.qualified_name, u.signature);
      result.units.push_back(std::move(u));
      scope.unit = static_cast<int>(result.units.size()) - 1;
    }
    // one-liner bodies ("def f(): return 1") have no docstring line to inspect
    scope.saw_body = !l.opens_block;
    stack.push_back(std::move(scope));
    pending_decorator = 0;
  }
  while (!stack.empty()) {
    close_scope(stack.back());
    stack.pop_back();
  }
  return result;
}

const ApiUnit* ApiTable::by_id(std::string_view id) const {
  auto it = std::find_if(units.begin(), units.end(), [&](const ApiUnit& u) { return u.id == id; });
  return it == units.end() ? nullptr : &*it;
}

const ApiUnit* ApiTable::by_qualified_name(std::string_view name) const {
  auto it = std::find_if(units.begin(), units.end(),
                         [&](const ApiUnit& u) { return u.qualified_name == name; });
  return it == units.end() ? nullptr : &*it;
}

ApiTable build_api_table(const CorpusManifest& manifest) {
  ApiTable table;
  for (const SourceFile& f : manifest.files) {
    ExtractResult r = extract_api_units(f);
    if (r.error) table.errors.push_back(*r.error);
    for (auto& u : r.units) table.units.push_back(std::move(u));
  }
  std::stable_sort(table.units.begin(), table.units.end(), [](const ApiUnit& a, const ApiUnit& b) {
    return std::tie(a.path, a.span.start) < std::tie(b.path, b.span.start);
  });
  return table;
}

std::string extract_context(const CorpusManifest& manifest, std::string_view path,
                            const LineSpan& span) {
  const SourceFile* f = manifest.find(path);
  if (f == nullptr) throw Error(ErrorKind::Io, "target file not in corpus: " + std::string(path));
  if (span.start < 1 || span.start > static_cast<int>(f->line_count) + 1 || span.end < span.start) {
    throw Error(ErrorKind::Precondition,
                fmt::format("invalid target span {}-{} for {}", span.start, span.end, path));
  }
  std::size_t offset = 0;
  for (int line = 1; line < span.start; ++line) {
    std::size_t nl = f->text.find('\n', offset);
    offset = nl == std::string::npos ? f->text.size() : nl + 1;
  }
  return f->text.substr(0, offset);
}

std::string CodeWindow::key() const {
  return fmt::format("{}:{:06d}-{:06d}", path, start_line, end_line);
}

std::vector<CodeWindow> chunk_windows(const SourceFile& file, int window_size, int stride) {
  if (window_size < 1 || stride < 1 || stride > window_size) {
    throw Error(ErrorKind::Precondition,
                fmt::format("chunk_windows requires window_size >= 1 and 1 <= stride <= window_size "
                            "(got {} / {})",
                            window_size, stride));
  }
  const auto lines = split_lines(file.text);
  const int n = static_cast<int>(lines.size());
  std::vector<CodeWindow> out;
  for (int start = 1; start <= n; start += stride) {
    int end = std::min(start + window_size - 1, n);
    out.push_back(CodeWindow{file.path, start, end, join_lines(lines, start, end)});
  }
  return out;
}

std::string reindent(std::string_view code, int indent) {
  const auto lines = split_lines(code);
  std::size_t margin = std::string::npos;
  for (auto l : lines) {
    std::size_t first = l.find_first_not_of(" \t");
    if (first != std::string_view::npos) margin = std::min(margin, first);
  }
  if (margin == std::string::npos) margin = 0;
  std::string pad(static_cast<std::size_t>(std::max(indent, 0)), ' ');
  std::string out;
  for (auto l : lines) {
    if (l.find_first_not_of(" \t") == std::string_view::npos) {
      out.push_back('\n');
      continue;
    }
    out += pad;
    out.append(l.substr(std::min(margin, l.size())));
    out.push_back('\n');
  }
  return out;
}

nlohmann::json to_json(const ApiUnit& u) {
  nlohmann::json j{{"id", u.id},
                   {"qualified_name", u.qualified_name},
                   {"signature", u.signature},
                   {"doc", nullptr},
                   {"body", u.body},
                   {"path", u.path},
                   {"span", {{"start", u.span.start}, {"end", u.span.end}}}};
  if (u.doc) j["doc"] = *u.doc;
  return j;
}

ApiUnit api_unit_from_json(const nlohmann::json& j) {
  ApiUnit u;
  u.id = j.at("id").get<std::string>();
  u.qualified_name = j.at("qualified_name").get<std::string>();
  u.signature = j.at("signature").get<std::string>();
  if (!j.at("doc").is_null()) u.doc = j.at("doc").get<std::string>();
  u.body = j.at("body").get<std::string>();
  u.path = j.at("path").get<std::string>();
  u.span = {j.at("span").at("start").get<int>(), j.at("span").at("end").get<int>()};
  return u;
}

void write_api_table(const fs::path& file, const ApiTable& table) {
  std::vector<nlohmann::json> rows;
  rows.reserve(table.units.size());
  for (const auto& u : table.units) rows.push_back(to_json(u));
  write_jsonl(file, rows);
}

ApiTable read_api_table(const fs::path& file) {
  ApiTable t;
  for (const auto& row : read_jsonl(file)) t.units.push_back(api_unit_from_json(row));
  return t;
}

}  // namespace alliance
