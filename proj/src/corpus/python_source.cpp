#include "alliance/python_source.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>

namespace alliance::py {
namespace {

bool is_name_start(unsigned char c) {
  return std::isalpha(c) || c == '_' || c >= 0x80;
}

bool is_name_char(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

bool is_string_prefix(std::string_view p) {
  if (p.size() > 2) return false;
  for (char c : p) {
    switch (std::tolower(static_cast<unsigned char>(c))) {
      case 'r':
      case 'b':
      case 'u':
      case 'f':
        break;
      default:
        return false;
    }
  }
  return true;
}

char closing_for(char open) {
  switch (open) {
    case '(':
      return ')';
    case '[':
      return ']';
    default:
      return '}';
  }
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Lexed run() {
    while (pos_ < src_.size() && !out_.error) {
      if (at_line_start_ && brackets_.empty()) {
        if (!begin_physical_line()) continue;
      }
      step();
    }
    if (!out_.error) {
      if (!brackets_.empty()) {
        fail(line_, "unexpected EOF: unclosed '" + std::string(1, brackets_.back()) + "'");
      } else {
        close_logical_line();
      }
    }
    if (!out_.error) check_indentation();
    return std::move(out_);
  }

 private:
  // Measures indentation of a fresh physical line; returns false when the
  // line is blank or comment-only and has been consumed.
  bool begin_physical_line() {
    int col = 0;
    std::size_t p = pos_;
    while (p < src_.size()) {
      char c = src_[p];
      if (c == ' ') {
        ++col;
      } else if (c == '\t') {
        col = (col / 8 + 1) * 8;
      } else if (c == '\f') {
        col = 0;
      } else {
        break;
      }
      ++p;
    }
    if (p >= src_.size() || src_[p] == '\n' || src_[p] == '\r' || src_[p] == '#') {
      while (p < src_.size() && src_[p] != '\n') ++p;
      if (p < src_.size()) ++p;
      pos_ = p;
      ++line_;
      return false;
    }
    pos_ = p;
    if (!in_logical_) pending_indent_ = col;
    at_line_start_ = false;
    return true;
  }

  void step() {
    char c = src_[pos_];
    if (c == '\n') {
      ++pos_;
      ++line_;
      if (brackets_.empty()) {
        at_line_start_ = true;
        close_logical_line();
      }
      return;
    }
    if (c == ' ' || c == '\t' || c == '\r' || c == '\f') {
      ++pos_;
      return;
    }
    if (c == '#') {
      while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
      return;
    }
    if (c == '\\') {
      std::size_t p = pos_ + 1;
      if (p < src_.size() && src_[p] == '\r') ++p;
      if (p < src_.size() && src_[p] == '\n') {
        pos_ = p + 1;
        ++line_;
        return;
      }
      fail(line_, "unexpected character after line continuation");
      return;
    }
    if (c == '"' || c == '\'') {
      lex_string(pos_, pos_);
      return;
    }
    if (is_name_start(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < src_.size() && is_name_char(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      std::string_view word = src_.substr(start, pos_ - start);
      if (pos_ < src_.size() && (src_[pos_] == '"' || src_[pos_] == '\'') && is_string_prefix(word)) {
        lex_string(start, pos_);
        return;
      }
      push(TokenKind::Name, start, pos_, line_);
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
      std::size_t start = pos_;
      while (pos_ < src_.size()) {
        char d = src_[pos_];
        if (std::isalnum(static_cast<unsigned char>(d)) || d == '_' || d == '.') {
          ++pos_;
        } else if ((d == '+' || d == '-') && (src_[pos_ - 1] == 'e' || src_[pos_ - 1] == 'E') &&
                   !(src_[start] == '0' && pos_ - start > 1 &&
                     (src_[start + 1] == 'x' || src_[start + 1] == 'X'))) {
          ++pos_;
        } else {
          break;
        }
      }
      push(TokenKind::Number, start, pos_, line_);
      return;
    }
    if (c == '(' || c == '[' || c == '{') {
      brackets_.push_back(c);
      push(TokenKind::Op, pos_, pos_ + 1, line_);
      ++pos_;
      return;
    }
    if (c == ')' || c == ']' || c == '}') {
      if (brackets_.empty()) {
        fail(line_, "unmatched '" + std::string(1, c) + "'");
        return;
      }
      if (closing_for(brackets_.back()) != c) {
        fail(line_, "closing '" + std::string(1, c) + "' does not match '" +
                        std::string(1, brackets_.back()) + "'");
        return;
      }
      brackets_.pop_back();
      push(TokenKind::Op, pos_, pos_ + 1, line_);
      ++pos_;
      return;
    }
    static constexpr std::array<std::string_view, 12> kMulti = {
        "->", "**=", "//=", ">>=", "<<=", "**", "//", "==", "!=", "<=", ">=", ":="};
    for (std::string_view op : kMulti) {
      if (src_.substr(pos_, op.size()) == op) {
        push(TokenKind::Op, pos_, pos_ + op.size(), line_);
        pos_ += op.size();
        return;
      }
    }
    push(TokenKind::Op, pos_, pos_ + 1, line_);
    ++pos_;
  }

  void lex_string(std::size_t token_start, std::size_t quote_pos) {
    char q = src_[quote_pos];
    bool triple = src_.substr(quote_pos, 3) == std::string(3, q);
    int start_line = line_;
    std::size_t p = quote_pos + (triple ? 3 : 1);
    while (true) {
      if (p >= src_.size()) {
        fail(start_line, triple ? "unterminated triple-quoted string literal"
                                : "unterminated string literal");
        return;
      }
      char c = src_[p];
      if (c == '\\') {
        if (p + 1 < src_.size() && src_[p + 1] == '\n') ++line_;
        p += 2;
        continue;
      }
      if (c == '\n') {
        if (!triple) {
          fail(start_line, "unterminated string literal");
          return;
        }
        ++line_;
        ++p;
        continue;
      }
      if (c == q) {
        if (!triple) {
          ++p;
          break;
        }
        if (src_.substr(p, 3) == std::string(3, q)) {
          p += 3;
          break;
        }
      }
      ++p;
    }
    Token t{TokenKind::String, src_.substr(token_start, p - token_start), start_line, line_, token_start};
    open_logical(start_line);
    out_.tokens.push_back(t);
    pos_ = p;
  }

  void push(TokenKind kind, std::size_t begin, std::size_t end, int line) {
    open_logical(line);
    out_.tokens.push_back(Token{kind, src_.substr(begin, end - begin), line, line, begin});
  }

  void open_logical(int line) {
    if (in_logical_) return;
    in_logical_ = true;
    current_ = LogicalLine{};
    current_.first_line = line;
    current_.indent = pending_indent_;
    current_.token_begin = out_.tokens.size();
  }

  void close_logical_line() {
    if (!in_logical_) return;
    in_logical_ = false;
    current_.token_end = out_.tokens.size();
    const Token& last = out_.tokens[current_.token_end - 1];
    current_.last_line = last.end_line;
    current_.opens_block = last.kind == TokenKind::Op && last.text == ":";
    out_.lines.push_back(current_);
  }

  void check_indentation() {
    std::vector<int> stack{0};
    bool expect_indent = false;
    for (const LogicalLine& l : out_.lines) {
      if (expect_indent) {
        if (l.indent <= stack.back()) {
          fail(l.first_line, "expected an indented block");
          return;
        }
        stack.push_back(l.indent);
      } else if (l.indent > stack.back()) {
        fail(l.first_line, "unexpected indent");
        return;
      } else {
        while (l.indent < stack.back()) stack.pop_back();
        if (l.indent != stack.back()) {
          fail(l.first_line, "unindent does not match any outer indentation level");
          return;
        }
      }
      expect_indent = l.opens_block;
    }
    if (expect_indent) {
      fail(out_.lines.back().last_line, "expected an indented block at end of file");
    }
  }

  void fail(int line, std::string message) {
    if (!out_.error) out_.error = SyntaxIssue{line, std::move(message)};
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  bool at_line_start_ = true;
  bool in_logical_ = false;
  int pending_indent_ = 0;
  std::vector<char> brackets_;
  LogicalLine current_{};
  Lexed out_;
};

std::string clean_doc(std::string_view text) {
  std::vector<std::string> lines;
  std::istringstream in{std::string(text)};
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  if (text.ends_with('\n')) lines.emplace_back();
  std::size_t margin = std::string::npos;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string& l = lines[i];
    std::size_t first = l.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    margin = std::min(margin, first);
  }
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string l = lines[i];
    if (i == 0) {
      std::size_t first = l.find_first_not_of(" \t");
      l = first == std::string::npos ? "" : l.substr(first);
    } else if (margin != std::string::npos) {
      l = l.size() > margin ? l.substr(margin) : (l.find_first_not_of(" \t") == std::string::npos ? "" : l);
    }
    lines[i] = l;
  }
  while (!lines.empty() && lines.back().find_first_not_of(" \t") == std::string::npos) lines.pop_back();
  std::size_t begin = 0;
  while (begin < lines.size() && lines[begin].find_first_not_of(" \t") == std::string::npos) ++begin;
  for (std::size_t i = begin; i < lines.size(); ++i) {
    if (i > begin) out.push_back('\n');
    out += lines[i];
  }
  return out;
}

}  // namespace

Lexed lex(std::string_view source) { return Lexer(source).run(); }

std::string string_literal_value(std::string_view token_text) {
  std::size_t q = token_text.find_first_of("'\"");
  if (q == std::string_view::npos) return std::string(token_text);
  std::string_view body = token_text.substr(q);
  bool triple = body.size() >= 6 && body.substr(0, 3) == std::string(3, body[0]);
  std::size_t cut = triple ? 3 : 1;
  if (body.size() < 2 * cut) return {};
  std::string_view inner = body.substr(cut, body.size() - 2 * cut);
  return triple ? clean_doc(inner) : std::string(inner);
}

bool is_keyword(std::string_view name) {
  static constexpr std::array<std::string_view, 35> kKeywords = {
      "False", "None",   "True",    "and",      "as",       "assert", "async",
      "await", "break",  "class",   "continue", "def",      "del",    "elif",
      "else",  "except", "finally", "for",      "from",     "global", "if",
      "import", "in",    "is",      "lambda",   "nonlocal", "not",    "or",
      "pass",  "raise",  "return",  "try",      "while",    "with",   "yield"};
  return std::find(kKeywords.begin(), kKeywords.end(), name) != kKeywords.end();
}

bool is_builtin(std::string_view name) {
  static constexpr std::array<std::string_view, 69> kBuiltins = {
      "abs",       "aiter",      "all",        "anext",     "any",        "ascii",
      "bin",       "bool",       "breakpoint", "bytearray", "bytes",      "callable",
      "chr",       "classmethod", "compile",   "complex",   "delattr",    "dict",
      "dir",       "divmod",     "enumerate",  "eval",      "exec",       "filter",
      "float",     "format",     "frozenset",  "getattr",   "globals",    "hasattr",
      "hash",      "help",       "hex",        "id",        "input",      "int",
      "isinstance", "issubclass", "iter",      "len",       "list",       "locals",
      "map",       "max",        "memoryview", "min",       "next",       "object",
      "oct",       "open",       "ord",        "pow",       "print",      "property",
      "range",     "repr",       "reversed",   "round",     "set",        "setattr",
      "slice",     "sorted",     "staticmethod", "str",     "sum",        "super",
      "tuple",     "type",       "vars"};
  return std::find(kBuiltins.begin(), kBuiltins.end(), name) != kBuiltins.end();
}

}  // namespace alliance::py
