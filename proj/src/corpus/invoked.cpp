#include <algorithm>
#include <set>

#include "alliance/corpus.hpp"
#include "alliance/python_source.hpp"

namespace alliance {

namespace {

using py::TokenKind;

std::vector<std::string> split_dots(std::string_view s) {
  std::vector<std::string> parts;
  std::size_t begin = 0;
  while (begin <= s.size()) {
    std::size_t dot = s.find('.', begin);
    if (dot == std::string_view::npos) dot = s.size();
    if (dot > begin) parts.emplace_back(s.substr(begin, dot - begin));
    begin = dot + 1;
  }
  return parts;
}

std::string join_dots(const std::vector<std::string>& parts, std::size_t from = 0) {
  std::string out;
  for (std::size_t i = from; i < parts.size(); ++i) {
    if (!out.empty()) out.push_back('.');
    out += parts[i];
  }
  return out;
}

// Reads a dotted name starting at token i; returns the end index.
std::size_t read_dotted(const std::vector<py::Token>& toks, std::size_t i, std::size_t end,
                        std::string& out) {
  out.clear();
  while (i < end && toks[i].kind == TokenKind::Name) {
    out.append(toks[i].text);
    if (i + 1 < end && toks[i + 1].text == ".") {
      out.push_back('.');
      i += 2;
    } else {
      return i + 1;
    }
  }
  return i;
}

class Resolver {
 public:
  Resolver(std::span<const ApiUnit> table, const ResolutionScope& scope) : table_(table), scope_(scope) {}

  const ApiUnit* resolve(const std::vector<std::string>& chain) const {
    if (chain.empty()) return nullptr;
    const std::string& head = chain.front();
    const std::string rest = join_dots(chain, 1);

    if (head == "self" || head == "cls") {
      if (scope_.enclosing_class.empty() || rest.empty()) return nullptr;
      return exact_or_ctor(scope_.enclosing_class + "." + rest);
    }
    if (auto it = scope_.imports.find(head); it != scope_.imports.end()) {
      return exact_or_ctor(rest.empty() ? it->second : it->second + "." + rest);
    }
    std::string joined = join_dots(chain);
    if (!scope_.module.empty()) {
      if (const ApiUnit* u = exact_or_ctor(scope_.module + "." + joined)) return u;
    }
    if (chain.size() == 1 && py::is_builtin(head)) return nullptr;
    if (const ApiUnit* u = unique_suffix(joined)) return u;
    return unique_suffix(joined + ".__init__");
  }

 private:
  const ApiUnit* exact(std::string_view q) const {
    for (const ApiUnit& u : table_) {
      if (u.qualified_name == q) return &u;
    }
    return nullptr;
  }

  const ApiUnit* exact_or_ctor(const std::string& q) const {
    if (const ApiUnit* u = exact(q)) return u;
    return exact(q + ".__init__");
  }

  const ApiUnit* unique_suffix(const std::string& tail) const {
    const ApiUnit* found = nullptr;
    std::string dotted = "." + tail;
    for (const ApiUnit& u : table_) {
      if (u.qualified_name == tail || u.qualified_name.ends_with(dotted)) {
        if (found != nullptr && found->qualified_name != u.qualified_name) return nullptr;
        found = &u;
      }
    }
    return found;
  }

  std::span<const ApiUnit> table_;
  const ResolutionScope& scope_;
};

}  // namespace

std::map<std::string, std::string> collect_imports(std::string_view source, std::string_view module) {
  std::map<std::string, std::string> out;
  // Lines lexed before any error are still usable.
  py::Lexed lx = py::lex(source);
  const auto& toks = lx.tokens;
  const auto module_parts = split_dots(module);

  for (const py::LogicalLine& line : lx.lines) {
    const std::size_t i = line.token_begin;
    const std::size_t end = line.token_end;
    if (toks[i].text == "import") {
      std::size_t k = i + 1;
      while (k < end) {
        std::string name;
        k = read_dotted(toks, k, end, name);
        if (name.empty()) break;
        if (k + 1 < end && toks[k].text == "as" && toks[k + 1].kind == TokenKind::Name) {
          out[std::string(toks[k + 1].text)] = name;
          k += 2;
        } else {
          std::string first = name.substr(0, name.find('.'));
          out[first] = first;
        }
        if (k < end && toks[k].text == ",") ++k;
        else break;
      }
    } else if (toks[i].text == "from") {
      std::size_t k = i + 1;
      std::size_t level = 0;
      while (k < end && (toks[k].text == "." || toks[k].text == "...")) {
        level += toks[k].text.size();
        ++k;
      }
      std::string base;
      k = read_dotted(toks, k, end, base);
      if (k >= end || toks[k].text != "import") continue;
      ++k;
      if (level > 0) {
        std::vector<std::string> parts = module_parts;
        for (std::size_t d = 0; d < level && !parts.empty(); ++d) parts.pop_back();
        std::string prefix = join_dots(parts);
        base = prefix.empty() ? base : (base.empty() ? prefix : prefix + "." + base);
      }
      if (k < end && toks[k].text == "(") ++k;
      while (k < end && toks[k].kind == TokenKind::Name) {
        std::string name(toks[k].text);
        std::string alias = name;
        ++k;
        if (k + 1 < end && toks[k].text == "as" && toks[k + 1].kind == TokenKind::Name) {
          alias = std::string(toks[k + 1].text);
          k += 2;
        }
        out[alias] = base.empty() ? name : base + "." + name;
        if (k < end && toks[k].text == ",") ++k;
      }
    }
  }
  return out;
}

InvokedApis extract_invoked_apis(std::string_view reference_solution, std::span<const ApiUnit> api_table,
                                 const ResolutionScope& scope) {
  InvokedApis result;
  std::string dedented = reindent(reference_solution, 0);
  py::Lexed lx = py::lex(dedented);
  if (!lx.ok()) {
    result.unparsable = true;
    result.diagnostic = "line " + std::to_string(lx.error->line) + ": " + lx.error->message;
    return result;
  }
  Resolver resolver(api_table, scope);
  std::set<std::string> ids;
  const auto& toks = lx.tokens;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i].kind != TokenKind::Name || py::is_keyword(toks[i].text)) continue;
    if (i > 0) {
      std::string_view prev = toks[i - 1].text;
      if (prev == "." || prev == "def" || prev == "class") continue;
    }
    std::vector<std::string> chain{std::string(toks[i].text)};
    std::size_t k = i + 1;
    while (k + 1 < toks.size() && toks[k].text == "." && toks[k + 1].kind == TokenKind::Name) {
      chain.emplace_back(toks[k + 1].text);
      k += 2;
    }
    if (k < toks.size() && toks[k].text == "(") {
      if (const ApiUnit* u = resolver.resolve(chain); u != nullptr && u->id != scope.exclude_id) {
        ids.insert(u->id);
      }
    }
  }
  result.ids.assign(ids.begin(), ids.end());
  return result;
}

std::string_view to_string(Containment c) {
  switch (c) {
    case Containment::FullyContained:
      return "FullyContained";
    case Containment::PartiallyContained:
      return "PartiallyContained";
    case Containment::NotIncluded:
      return "NotIncluded";
  }
  return "?";
}

ContainmentResult classify_containment(std::string_view context,
                                       std::span<const ApiUnit* const> oracle_apis) {
  if (oracle_apis.empty()) return {Containment::FullyContained, true};
  std::size_t hits = 0;
  for (const ApiUnit* u : oracle_apis) {
    if (!u->body.empty() && context.find(u->body) != std::string_view::npos) ++hits;
  }
  if (hits == oracle_apis.size()) return {Containment::FullyContained, false};
  if (hits == 0) return {Containment::NotIncluded, false};
  return {Containment::PartiallyContained, false};
}

}  // namespace alliance
