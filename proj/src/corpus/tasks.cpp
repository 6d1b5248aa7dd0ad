#include <algorithm>

#include "alliance/corpus.hpp"
#include "alliance/error.hpp"
#include "alliance/jsonl.hpp"

namespace alliance {

namespace fs = std::filesystem;

namespace {

std::string trim_trailing_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

GenerationTask load_task(const fs::path& dir, const CorpusManifest& manifest, const ApiTable& table) {
  GenerationTask task;
  task.task_id = dir.filename().string();
  task.task_dir = dir;
  task.query = trim_trailing_newlines(read_file(dir / "query.txt"));
  task.reference_solution = read_file(dir / "reference.py");

  nlohmann::json target;
  try {
    target = nlohmann::json::parse(read_file(dir / "target.json"));
    task.target_path = target.at("path").get<std::string>();
    task.target_span = {target.at("start_line").get<int>(), target.at("end_line").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, (dir / "target.json").string() + ": " + e.what());
  }

  try {
    nlohmann::json tests = nlohmann::json::parse(read_file(dir / "tests.json"));
    task.test_suite.files = tests.value("files", std::vector<std::string>{});
    task.test_suite.commands = tests.at("commands").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, (dir / "tests.json").string() + ": " + e.what());
  }

  task.context_block = extract_context(manifest, task.target_path, task.target_span);

  ResolutionScope scope;
  scope.module = module_name_for(task.target_path);
  auto target_unit = std::find_if(table.units.begin(), table.units.end(), [&](const ApiUnit& u) {
    return u.path == task.target_path && u.span.start == task.target_span.start;
  });
  if (target_unit != table.units.end()) {
    task.target_unit_id = target_unit->id;
    scope.exclude_id = target_unit->id;
    const std::string& q = target_unit->qualified_name;
    std::string owner = q.substr(0, q.rfind('.'));
    if (owner != scope.module && owner.size() > scope.module.size()) scope.enclosing_class = owner;
  }
  scope.imports = collect_imports(task.context_block, scope.module);

  InvokedApis invoked = extract_invoked_apis(task.reference_solution, table.units, scope);
  task.oracle_apis = std::move(invoked.ids);
  task.oracle_unparsable = invoked.unparsable;
  return task;
}

}  // namespace

std::vector<GenerationTask> load_tasks(const fs::path& benchmark_dir, const CorpusManifest& manifest,
                                       const ApiTable& table) {
  std::error_code ec;
  if (!fs::is_directory(benchmark_dir, ec)) {
    throw Error(ErrorKind::Io, "benchmark directory not found: " + benchmark_dir.string());
  }
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(benchmark_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "query.txt")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<GenerationTask> tasks;
  tasks.reserve(dirs.size());
  for (const auto& d : dirs) tasks.push_back(load_task(d, manifest, table));
  return tasks;
}

}  // namespace alliance
