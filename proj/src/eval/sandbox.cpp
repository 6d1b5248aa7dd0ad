#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "alliance/error.hpp"
#include "alliance/eval.hpp"
#include "alliance/hashing.hpp"
#include "alliance/jsonl.hpp"

namespace alliance {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kStatusNames[] = {"Pass", "TestFail", "RuntimeError", "Timeout", "CandidateUnparsable"};

struct Checkout {
  fs::path dir;
  explicit Checkout(const fs::path& root) {
    std::random_device rd;
    dir = root / fmt::format("alliance-sandbox-{:08x}{:08x}", rd(), rd());
    fs::create_directories(dir);
  }
  ~Checkout() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

bool on_path(const std::string& program) {
  if (program.find('/') != std::string::npos) return ::access(program.c_str(), X_OK) == 0;
  const char* path = std::getenv("PATH");
  if (path == nullptr) return false;
  std::string_view rest = path;
  while (!rest.empty()) {
    auto colon = rest.find(':');
    std::string dir(rest.substr(0, colon));
    if (!dir.empty() && ::access((fs::path(dir) / program).c_str(), X_OK) == 0) return true;
    if (colon == std::string_view::npos) break;
    rest.remove_prefix(colon + 1);
  }
  return false;
}

struct ProcessOutcome {
  int exit_code = 0;
  bool timed_out = false;
  bool signaled = false;
  std::string err;
};

ProcessOutcome run_process(const std::vector<std::string>& argv, const fs::path& cwd, const SandboxConfig& cfg) {
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  std::vector<std::string> env_storage;
  for (char** e = environ; *e != nullptr; ++e) {
    std::string_view kv = *e;
    if (kv.starts_with("PYTHONPATH=") || kv.starts_with("PYTHONDONTWRITEBYTECODE=")) continue;
    env_storage.emplace_back(kv);
  }
  env_storage.push_back("PYTHONPATH=" + cwd.string());
  env_storage.push_back("PYTHONDONTWRITEBYTECODE=1");
  std::vector<char*> env;
  for (auto& e : env_storage) env.push_back(e.data());
  env.push_back(nullptr);
  const rlimit as{cfg.memory_bytes, cfg.memory_bytes};

  int err_pipe[2];
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) throw Error(ErrorKind::Environment, "pipe failed");
  pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorKind::Environment, std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(err_pipe[1], STDERR_FILENO);
    int devnull = ::open("/dev/null", O_RDWR);
    if (devnull >= 0) {
      ::dup2(devnull, STDIN_FILENO);
      ::dup2(devnull, STDOUT_FILENO);
    }
    if (cfg.isolate_network) ::unshare(CLONE_NEWUSER | CLONE_NEWNET);  // best effort
    ::setrlimit(RLIMIT_AS, &as);
    if (::chdir(cwd.c_str()) != 0) ::_exit(126);
    ::execvpe(args[0], args.data(), env.data());
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(err_pipe[1]);

  ProcessOutcome out;
  auto deadline = std::chrono::steady_clock::now() + cfg.timeout;
  bool eof = false;
  char buf[4096];
  while (!eof) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      out.timed_out = true;
      break;
    }
    pollfd p{err_pipe[0], POLLIN, 0};
    int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 100)));
    if (rc < 0 && errno != EINTR) break;
    if (rc > 0) {
      ssize_t n = ::read(err_pipe[0], buf, sizeof buf);
      if (n <= 0) {
        eof = true;
      } else if (out.err.size() < (1u << 20)) {
        out.err.append(buf, static_cast<std::size_t>(n));
      }
    }
  }
  if (out.timed_out) ::kill(-pid, SIGKILL);
  int status = 0;
  while (true) {
    if (out.timed_out) {
      ::waitpid(pid, &status, 0);
      break;
    }
    // stderr closed: wait for exit, still bounded by the deadline
    pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      out.timed_out = true;
      ::kill(-pid, SIGKILL);
      continue;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ::kill(-pid, SIGKILL);  // stray children of the test
  ::close(err_pipe[0]);
  if (WIFEXITED(status)) out.exit_code = WEXITSTATUS(status);
  if (WIFSIGNALED(status)) {
    out.signaled = true;
    out.exit_code = 128 + WTERMSIG(status);
  }
  return out;
}

std::string tail(const std::string& s, std::size_t n) { return s.size() <= n ? s : s.substr(s.size() - n); }

}  // namespace

std::string_view to_string(VerdictStatus s) { return kStatusNames[static_cast<int>(s)]; }

VerdictStatus verdict_status_from_string(std::string_view s) {
  for (int i = 0; i < 5; ++i) {
    if (kStatusNames[i] == s) return static_cast<VerdictStatus>(i);
  }
  throw Error(ErrorKind::Parse, "unknown verdict status: " + std::string(s));
}

json to_json(const ExecutionVerdict& v) {
  json tests = json::array();
  for (const auto& t : v.tests) {
    tests.push_back({{"command", t.command}, {"status", to_string(t.status)}, {"exit_code", t.exit_code},
                     {"seconds", t.seconds}, {"stderr_tail", t.stderr_tail}});
  }
  return {{"status", to_string(v.status)}, {"tests", tests}, {"wall_time", v.wall_time}};
}

ExecutionVerdict execution_verdict_from_json(const json& j) {
  ExecutionVerdict v;
  v.status = verdict_status_from_string(j.at("status").get<std::string>());
  v.wall_time = j.value("wall_time", 0.0);
  for (const auto& t : j.value("tests", json::array())) {
    v.tests.push_back({t.at("command").get<std::vector<std::string>>(),
                       verdict_status_from_string(t.at("status").get<std::string>()), t.value("exit_code", 0),
                       t.value("seconds", 0.0), t.value("stderr_tail", "")});
  }
  return v;
}

std::string splice_candidate(std::string_view file_text, const LineSpan& span, std::string_view candidate) {
  auto lines = split_lines(file_text);
  if (span.start < 1 || span.end < span.start || static_cast<std::size_t>(span.end) > lines.size()) {
    throw Error(ErrorKind::Precondition, fmt::format("target span {}-{} outside file of {} lines", span.start,
                                                     span.end, lines.size()));
  }
  std::string_view first = lines[static_cast<std::size_t>(span.start - 1)];
  int indent = 0;
  while (static_cast<std::size_t>(indent) < first.size() && first[static_cast<std::size_t>(indent)] == ' ') ++indent;
  std::string out;
  for (int i = 1; i < span.start; ++i) {
    out.append(lines[static_cast<std::size_t>(i - 1)]);
    out.push_back('\n');
  }
  std::string body = reindent(candidate, indent);
  out += body;
  if (!body.ends_with('\n')) out.push_back('\n');
  for (std::size_t i = static_cast<std::size_t>(span.end); i < lines.size(); ++i) {
    out.append(lines[i]);
    out.push_back('\n');
  }
  return out;
}

ExecutionVerdict execute_candidate(const std::optional<CodeCandidate>& candidate, const GenerationTask& task,
                                   const SandboxConfig& cfg) {
  ExecutionVerdict v;
  if (!candidate || candidate->source.empty()) {
    v.status = VerdictStatus::CandidateUnparsable;
    return v;
  }
  for (const auto& cmd : task.test_suite.commands) {
    if (cmd.empty()) throw Error(ErrorKind::Config, "empty test command in task " + task.task_id);
    if (!on_path(cmd[0])) {
      throw Error(ErrorKind::Environment,
                  fmt::format("interpreter '{}' not found on PATH; install it or adjust the task's tests.json", cmd[0]));
    }
  }
  auto started = std::chrono::steady_clock::now();
  Checkout co(cfg.work_root);
  fs::copy(cfg.corpus_root, co.dir, fs::copy_options::recursive);
  fs::path target = co.dir / task.target_path;
  std::string spliced;
  try {
    spliced = splice_candidate(read_file(target), task.target_span, candidate->source);
  } catch (const Error&) {
    v.status = VerdictStatus::CandidateUnparsable;
    return v;
  }
  write_file_atomic(target, spliced);
  for (const auto& f : task.test_suite.files) {
    fs::copy_file(task.task_dir / f, co.dir / fs::path(f).filename(), fs::copy_options::overwrite_existing);
  }

  bool any_timeout = false, any_fail = false, any_error = false;
  for (const auto& cmd : task.test_suite.commands) {
    auto t0 = std::chrono::steady_clock::now();
    ProcessOutcome p = run_process(cmd, co.dir, cfg);
    TestResult r;
    r.command = cmd;
    r.exit_code = p.exit_code;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.stderr_tail = tail(p.err, 2000);
    if (p.timed_out) {
      r.status = VerdictStatus::Timeout;
      any_timeout = true;
    } else if (p.exit_code == 0) {
      r.status = VerdictStatus::Pass;
    } else if (p.err.find("AssertionError") != std::string::npos) {
      r.status = VerdictStatus::TestFail;
      any_fail = true;
    } else {
      r.status = VerdictStatus::RuntimeError;
      any_error = true;
    }
    v.tests.push_back(std::move(r));
  }
  v.status = any_timeout ? VerdictStatus::Timeout
             : any_fail  ? VerdictStatus::TestFail
             : any_error ? VerdictStatus::RuntimeError
                         : VerdictStatus::Pass;
  v.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return v;
}

std::string directory_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) {
    acc += f.generic_string();
    acc.push_back('\0');
    acc += sha256_hex(read_file(root / f));
    acc.push_back('\n');
  }
  return sha256_hex(acc);
}

}  // namespace alliance
