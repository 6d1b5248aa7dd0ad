#include <fnmatch.h>

#include <algorithm>

#include "alliance/corpus.hpp"
#include "alliance/error.hpp"
#include "alliance/hashing.hpp"
#include "alliance/jsonl.hpp"

namespace alliance {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_segments(std::string_view s) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (begin <= s.size()) {
    std::size_t slash = s.find('/', begin);
    if (slash == std::string_view::npos) slash = s.size();
    if (slash > begin) out.emplace_back(s.substr(begin, slash - begin));
    begin = slash + 1;
  }
  return out;
}

bool match_segments(const std::vector<std::string>& pat, std::size_t pi,
                    const std::vector<std::string>& path, std::size_t si) {
  if (pi == pat.size()) return si == path.size();
  if (pat[pi] == "**") {
    for (std::size_t k = si; k <= path.size(); ++k) {
      if (match_segments(pat, pi + 1, path, k)) return true;
    }
    return false;
  }
  if (si == path.size()) return false;
  if (fnmatch(pat[pi].c_str(), path[si].c_str(), 0) != 0) return false;
  return match_segments(pat, pi + 1, path, si + 1);
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    if (c < 0x80) {
      extra = 0;
    } else if ((c >> 5) == 0x6) {
      extra = 1;
    } else if ((c >> 4) == 0xe) {
      extra = 2;
    } else if ((c >> 3) == 0x1e) {
      extra = 3;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += extra + 1;
  }
  return true;
}

std::size_t count_lines(std::string_view text) {
  if (text.empty()) return 0;
  std::size_t n = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
  return text.back() == '\n' ? n : n + 1;
}

}  // namespace

bool glob_match(std::string_view pattern, std::string_view path) {
  return match_segments(split_segments(pattern), 0, split_segments(path), 0);
}

const SourceFile* CorpusManifest::find(std::string_view path) const {
  auto it = std::lower_bound(files.begin(), files.end(), path,
                             [](const SourceFile& f, std::string_view p) { return f.path < p; });
  if (it == files.end() || it->path != path) return nullptr;
  return &*it;
}

std::string CorpusManifest::hash() const {
  std::string buf;
  for (const auto& f : files) {
    buf += f.path;
    buf.push_back('\0');
    buf += sha256_hex(f.text);
    buf.push_back('\n');
  }
  return sha256_hex(buf);
}

CorpusManifest scan_repository(const fs::path& root, const ScanOptions& options) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw Error(ErrorKind::Io, "repository root is not a readable directory: " + root.string());
  }
  CorpusManifest manifest;
  manifest.root = root;
  fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot read repository root " + root.string() + ": " + ec.message());
  for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) {
      manifest.warnings.push_back({it->path().string(), ec.message()});
      ec.clear();
      continue;
    }
    if (!it->is_regular_file(ec)) continue;
    std::string rel = fs::relative(it->path(), root).generic_string();
    bool included = std::any_of(options.include_globs.begin(), options.include_globs.end(),
                                [&](const std::string& g) { return glob_match(g, rel); });
    bool excluded = std::any_of(options.exclude_globs.begin(), options.exclude_globs.end(),
                                [&](const std::string& g) { return glob_match(g, rel); });
    if (!included || excluded) continue;
    std::string text;
    try {
      text = read_file(it->path());
    } catch (const Error& e) {
      manifest.warnings.push_back({rel, e.what()});
      continue;
    }
    if (!valid_utf8(text)) {
      manifest.warnings.push_back({rel, "skipped: not valid UTF-8"});
      continue;
    }
    if (text.empty()) continue;
    std::size_t lines = count_lines(text);
    manifest.files.push_back(SourceFile{std::move(rel), std::move(text), lines});
  }
  std::sort(manifest.files.begin(), manifest.files.end(),
            [](const SourceFile& a, const SourceFile& b) { return a.path < b.path; });
  std::sort(manifest.warnings.begin(), manifest.warnings.end(),
            [](const Diagnostic& a, const Diagnostic& b) { return a.path < b.path; });
  return manifest;
}

nlohmann::json to_json(const SourceFile& f) {
  return {{"path", f.path}, {"text", f.text}, {"line_count", f.line_count}};
}

SourceFile source_file_from_json(const nlohmann::json& j) {
  return SourceFile{j.at("path").get<std::string>(), j.at("text").get<std::string>(),
                    j.at("line_count").get<std::size_t>()};
}

void write_manifest(const fs::path& file, const CorpusManifest& manifest) {
  std::vector<nlohmann::json> rows;
  rows.reserve(manifest.files.size());
  for (const auto& f : manifest.files) rows.push_back(to_json(f));
  write_jsonl(file, rows);
}

CorpusManifest read_manifest(const fs::path& file) {
  CorpusManifest m;
  for (const auto& row : read_jsonl(file)) m.files.push_back(source_file_from_json(row));
  std::sort(m.files.begin(), m.files.end(),
            [](const SourceFile& a, const SourceFile& b) { return a.path < b.path; });
  return m;
}

}  // namespace alliance
