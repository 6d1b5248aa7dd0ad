#pragma once

// Minimal lexical view of Python source: tokens and logical lines with
// indentation checks. Enough structure to find callable definitions and
// call sites without a full grammar.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace alliance::py {

enum class TokenKind { Name, Number, String, Op };

struct Token {
  TokenKind kind;
  std::string_view text;
  int line = 0;      // 1-based line where the token starts
  int end_line = 0;  // differs from line only for multi-line strings
  std::size_t offset = 0;
};

struct LogicalLine {
  int first_line = 0;
  int last_line = 0;
  int indent = 0;
  std::size_t token_begin = 0;
  std::size_t token_end = 0;
  bool opens_block = false;  // ends with ':' at bracket depth zero
};

struct SyntaxIssue {
  int line = 0;
  std::string message;
};

struct Lexed {
  std::vector<Token> tokens;
  std::vector<LogicalLine> lines;
  std::optional<SyntaxIssue> error;

  bool ok() const { return !error.has_value(); }
};

/// Tokenizes `source` and groups tokens into logical lines. `source` must
/// outlive the result since tokens view into it. Stops at the first issue.
Lexed lex(std::string_view source);

/// Content of a string literal token with prefix and quotes removed and,
/// for triple-quoted literals, common indentation stripped.
std::string string_literal_value(std::string_view token_text);

bool is_keyword(std::string_view name);
bool is_builtin(std::string_view name);

}  // namespace alliance::py
