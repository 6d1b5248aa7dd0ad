#include <cctype>
#include <optional>
#include <regex>

#include "alliance/error.hpp"
#include "alliance/jsonl.hpp"
#include "alliance/llm.hpp"

namespace alliance {

namespace {

std::size_t indent_of(std::string_view line) {
  std::size_t n = 0;
  while (n < line.size() && (line[n] == ' ' || line[n] == '\t')) ++n;
  return n;
}

bool blank(std::string_view line) { return indent_of(line) == line.size(); }

std::string_view trim_left(std::string_view line) { return line.substr(indent_of(line)); }

bool is_def_line(std::string_view line) {
  static const std::regex re(R"(^\s*(async\s+)?def\s+[A-Za-z_]\w*\s*\()");
  return std::regex_search(line.begin(), line.end(), re);
}

bool is_decorator_line(std::string_view line) {
  std::string_view t = trim_left(line);
  return t.size() > 1 && t[0] == '@' && (std::isalpha(static_cast<unsigned char>(t[1])) || t[1] == '_');
}

// Tracks triple-quoted strings and bracket depth across lines.
struct LineState {
  char triple = 0;
  int depth = 0;

  void feed(std::string_view line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (triple != 0) {
        if (c == '\\') {
          ++i;
        } else if (c == triple && line.substr(i, 3) == std::string(3, triple)) {
          triple = 0;
          i += 2;
        }
        continue;
      }
      if (c == '#') return;
      if (c == '"' || c == '\'') {
        if (line.substr(i, 3) == std::string(3, c)) {
          triple = c;
          i += 2;
          continue;
        }
        // single-line string
        for (++i; i < line.size() && line[i] != c; ++i) {
          if (line[i] == '\\') ++i;
        }
        continue;
      }
      if (c == '(' || c == '[' || c == '{') ++depth;
      if ((c == ')' || c == ']' || c == '}') && depth > 0) --depth;
    }
  }
};

// First definition in `lines`, from its decorators through the last line
// indented deeper than the header. Returns the dedented region.
std::optional<std::string> def_scan(const std::vector<std::string_view>& lines) {
  std::size_t def = 0;
  while (def < lines.size() && !is_def_line(lines[def])) ++def;
  if (def == lines.size()) return std::nullopt;
  const std::size_t base = indent_of(lines[def]);
  std::size_t start = def;
  while (start > 0 && is_decorator_line(lines[start - 1]) && indent_of(lines[start - 1]) == base) --start;

  LineState st;
  std::size_t i = def;
  // header, possibly spanning lines until the bracket depth returns to zero
  for (; i < lines.size(); ++i) {
    st.feed(lines[i]);
    if (st.depth == 0 && st.triple == 0) break;
  }
  if (i == lines.size()) return std::nullopt;
  std::string_view header_end = lines[i];
  while (!header_end.empty() && (header_end.back() == ' ' || header_end.back() == '\r')) header_end.remove_suffix(1);
  std::size_t end = i;
  bool has_body = false;
  if (!header_end.ends_with(':')) {
    // one-line body, e.g. "def f(): return 1"
    std::size_t colon = header_end.rfind("):");
    if (colon == std::string_view::npos) return std::nullopt;
    has_body = true;
  }
  for (std::size_t j = i + 1; j < lines.size(); ++j) {
    bool in_string = st.triple != 0;
    bool shallow = !blank(lines[j]) && indent_of(lines[j]) <= base;
    if (!in_string && shallow && !trim_left(lines[j]).starts_with('#')) break;
    st.feed(lines[j]);
    if (in_string || (!blank(lines[j]) && !shallow)) {
      end = j;
      has_body = true;
    }
  }
  if (!has_body) return std::nullopt;

  std::string out;
  for (std::size_t j = start; j <= end; ++j) {
    std::string_view l = lines[j];
    l.remove_prefix(std::min(base, indent_of(l)));
    while (!l.empty() && (l.back() == '\r' || l.back() == ' ' || l.back() == '\t')) l.remove_suffix(1);
    out.append(l);
    out.push_back('\n');
  }
  return out;
}

std::string strip_blank_edges(std::string_view text) {
  auto lines = split_lines(text);
  std::size_t b = 0, e = lines.size();
  while (b < e && blank(lines[b])) ++b;
  while (e > b && blank(lines[e - 1])) --e;
  std::string out;
  for (std::size_t i = b; i < e; ++i) {
    std::string_view l = lines[i];
    while (!l.empty() && (l.back() == '\r' || l.back() == ' ' || l.back() == '\t')) l.remove_suffix(1);
    out.append(l);
    out.push_back('\n');
  }
  return out;
}

std::vector<std::vector<std::string_view>> fenced_blocks(const std::vector<std::string_view>& lines) {
  std::vector<std::vector<std::string_view>> blocks;
  bool inside = false;
  std::vector<std::string_view> cur;
  for (auto line : lines) {
    if (trim_left(line).starts_with("```")) {
      if (inside) blocks.push_back(std::move(cur));
      cur.clear();
      inside = !inside;
      continue;
    }
    if (inside) cur.push_back(line);
  }
  if (inside && !cur.empty()) blocks.push_back(std::move(cur));  // unterminated fence
  return blocks;
}

}  // namespace

std::string_view to_string(ExtractionMethod m) {
  switch (m) {
    case ExtractionMethod::FencedBlock:
      return "fenced_block";
    case ExtractionMethod::HeuristicDefScan:
      return "heuristic_def_scan";
    case ExtractionMethod::WholeCompletion:
      return "whole_completion";
  }
  return "?";
}

ExtractionMethod extraction_method_from_string(std::string_view s) {
  if (s == "fenced_block") return ExtractionMethod::FencedBlock;
  if (s == "heuristic_def_scan") return ExtractionMethod::HeuristicDefScan;
  if (s == "whole_completion") return ExtractionMethod::WholeCompletion;
  throw Error(ErrorKind::Parse, "unknown extraction method: " + std::string(s));
}

std::optional<CodeCandidate> extract_code(std::string_view completion) {
  auto lines = split_lines(completion);
  for (const auto& block : fenced_blocks(lines)) {
    if (auto src = def_scan(block)) return CodeCandidate{*src, ExtractionMethod::FencedBlock};
  }
  auto src = def_scan(lines);
  if (!src) return std::nullopt;
  if (*src == strip_blank_edges(completion)) return CodeCandidate{*src, ExtractionMethod::WholeCompletion};
  return CodeCandidate{*src, ExtractionMethod::HeuristicDefScan};
}

}  // namespace alliance
