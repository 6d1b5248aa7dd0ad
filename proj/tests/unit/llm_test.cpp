#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <random>
#include <thread>

#include "alliance/error.hpp"
#include "alliance/jsonl.hpp"
#include "alliance/llm.hpp"

namespace fs = std::filesystem;
using namespace alliance;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("alliance_llm_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ChatRequest sample_request(std::string text = "hello", int sample = 0) {
  ChatRequest r;
  r.model = "m";
  r.messages = {{"system", "sys"}, {"user", std::move(text)}};
  r.stage = StageTag::Steps;
  r.template_version = template_version(StageTag::Steps);
  r.sample_index = sample;
  return r;
}

class FakeTransport : public HttpTransport {
 public:
  std::vector<HttpResponse> script;
  std::vector<HttpRequest> seen;

  HttpResponse post(const HttpRequest& request) override {
    seen.push_back(request);
    if (seen.size() > script.size()) return script.back();
    return script[seen.size() - 1];
  }
};

std::string ok_body(const std::string& content) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}},
              {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 7}}}}
      .dump();
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an alliance::Error";
  return ErrorKind::Precondition;
}

}  // namespace

TEST(ChatRequest, CacheKeySurvivesSerialization) {
  ChatRequest r = sample_request("déjà vu \"quoted\"\n\tline", 3);
  ChatRequest back = chat_request_from_json(json::parse(to_json(r).dump()));
  EXPECT_EQ(back, r);
  EXPECT_EQ(cache_key(back), cache_key(r));
  EXPECT_EQ(cache_key(r).size(), 64u);
}

TEST(ChatRequest, CacheKeyCoversDeterminingFields) {
  ChatRequest base = sample_request();
  auto differs = [&](auto mutate) {
    ChatRequest r = base;
    mutate(r);
    return cache_key(r) != cache_key(base);
  };
  EXPECT_TRUE(differs([](ChatRequest& r) { r.model = "other"; }));
  EXPECT_TRUE(differs([](ChatRequest& r) { r.temperature = 0.2; }));
  EXPECT_TRUE(differs([](ChatRequest& r) { r.stage = StageTag::Extend; }));
  EXPECT_TRUE(differs([](ChatRequest& r) { r.messages[1].content += "!"; }));
  EXPECT_TRUE(differs([](ChatRequest& r) { r.template_version = "steps@v2"; }));
  EXPECT_TRUE(differs([](ChatRequest& r) { r.sample_index = 2; }));
  EXPECT_FALSE(differs([](ChatRequest& r) { r.max_tokens = 99; }));
}

TEST(ChatRequest, Validation) {
  ChatRequest r = sample_request();
  EXPECT_NO_THROW(validate(r));
  r.temperature = 2.5;
  EXPECT_EQ(kind_of([&] { validate(r); }), ErrorKind::Precondition);
  r = sample_request();
  r.messages.clear();
  EXPECT_EQ(kind_of([&] { validate(r); }), ErrorKind::Precondition);
  r = sample_request();
  r.messages.front().role = "assistant";
  EXPECT_EQ(kind_of([&] { validate(r); }), ErrorKind::Precondition);
  EXPECT_DOUBLE_EQ(ChatRequest{}.temperature, 0.7);
}

TEST(Gateway, RecordThenReplayWithoutNetwork) {
  TempDir dir;
  auto scripted = std::make_shared<ScriptedProvider>(
      json{{"rules", {{{"stage", "steps"}, {"responses", {"1. first\n2. \"second\" · ünïcode\n", "1. alt\n"}}}}}});
  {
    Gateway rec(GatewayMode::Record, scripted, std::make_shared<ReplayCache>(dir.path / "cache.jsonl"),
                dir.path / "delta.jsonl");
    EXPECT_FALSE(rec.complete(sample_request("q", 1)).cached);
    EXPECT_FALSE(rec.complete(sample_request("q", 2)).cached);
    EXPECT_TRUE(rec.complete(sample_request("q", 1)).cached);
    EXPECT_EQ(rec.provider_calls(), 2u);
  }
  EXPECT_EQ(read_jsonl(dir.path / "cache.jsonl").size(), 2u);
  EXPECT_EQ(read_file(dir.path / "delta.jsonl"), read_file(dir.path / "cache.jsonl"));

  auto counter = std::make_shared<CountingTransport>(nullptr);
  auto live = std::make_shared<OpenAiChatProvider>(counter, "http://127.0.0.1:9", "k");
  Gateway replay(GatewayMode::Replay, live, std::make_shared<ReplayCache>(dir.path / "cache.jsonl"));
  CompletionResult a = replay.complete(sample_request("q", 1));
  CompletionResult b = replay.complete(sample_request("q", 1));
  EXPECT_TRUE(a.cached);
  EXPECT_EQ(a.text, "1. first\n2. \"second\" · ünïcode\n");
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(replay.complete(sample_request("q", 2)).text, "1. alt\n");
  EXPECT_EQ(counter->calls(), 0u);
  EXPECT_EQ(replay.provider_calls(), 0u);
}

TEST(Gateway, ReplayMissNamesKey) {
  Gateway g(GatewayMode::Replay, nullptr, std::make_shared<ReplayCache>());
  ChatRequest r = sample_request("absent");
  try {
    g.complete(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ReplayMiss);
    EXPECT_NE(std::string(e.what()).find(cache_key(r)), std::string::npos);
  }
}

TEST(Gateway, LiveModeNeedsProvider) {
  EXPECT_EQ(kind_of([] { Gateway g(GatewayMode::Live, nullptr, nullptr); }), ErrorKind::Config);
}

TEST(ReplayCache, BitExactRoundTripAndFirstWins) {
  TempDir dir;
  std::string tricky = "line1\r\nline2\t\"q\" \\ back \u00e9\u4e2d\n\n";
  {
    ReplayCache c(dir.path / "c.jsonl");
    EXPECT_TRUE(c.append({"k1", StageTag::Generate, tricky, 1, 2}));
    EXPECT_FALSE(c.append({"k1", StageTag::Generate, "other", 0, 0}));
    EXPECT_TRUE(c.append({"k2", StageTag::Extend, "x", 0, 0}));
  }
  append_jsonl(dir.path / "c.jsonl", to_json(CacheEntry{"k2", StageTag::Extend, "late duplicate", 0, 0}));
  ReplayCache back(dir.path / "c.jsonl");
  EXPECT_EQ(back.size(), 2u);
  EXPECT_EQ(back.find("k1")->text, tricky);
  EXPECT_EQ(back.find("k2")->text, "x");
  EXPECT_FALSE(back.find("k3"));
}

TEST(OpenAiProvider, RetriesServerErrorsWithBackoff) {
  auto t = std::make_shared<FakeTransport>();
  t->script = {{500, "", ""}, {0, "", "timeout"}, {200, ok_body("done"), ""}};
  std::vector<std::chrono::milliseconds> sleeps;
  RetryPolicy retry;
  retry.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };
  OpenAiChatProvider p(t, "https://api.example.test/v1", "secret", retry);
  CompletionResult r = p.chat(sample_request());
  EXPECT_EQ(r.text, "done");
  EXPECT_EQ(r.prompt_token_count, 11u);
  EXPECT_EQ(r.completion_token_count, 7u);
  ASSERT_EQ(t->seen.size(), 3u);
  EXPECT_EQ(t->seen[0].url, "https://api.example.test/v1/chat/completions");
  auto body = json::parse(t->seen[0].body);
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.7);
  EXPECT_EQ(body["messages"].size(), 2u);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(1000),
                                                            std::chrono::milliseconds(2000)}));
}

TEST(OpenAiProvider, ClientErrorIsConfigAndExhaustionIsProvider) {
  RetryPolicy retry;
  retry.sleep = [](std::chrono::milliseconds) {};
  auto t = std::make_shared<FakeTransport>();
  t->script = {{401, "bad key", ""}};
  OpenAiChatProvider p(t, "u", "k", retry);
  EXPECT_EQ(kind_of([&] { p.chat(sample_request()); }), ErrorKind::Config);
  EXPECT_EQ(t->seen.size(), 1u);

  auto t2 = std::make_shared<FakeTransport>();
  t2->script = {{503, "", ""}};
  OpenAiChatProvider p2(t2, "u", "k", retry);
  EXPECT_EQ(kind_of([&] { p2.chat(sample_request()); }), ErrorKind::Provider);
  EXPECT_EQ(t2->seen.size(), 3u);
}

TEST(Gateway, BoundsConcurrentProviderCalls) {
  class Slow : public ChatProvider {
   public:
    std::atomic<int> current{0};
    std::atomic<int> peak{0};
    std::string id() const override { return "slow"; }
    CompletionResult chat(const ChatRequest&) override {
      int now = ++current;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      --current;
      return {"ok", 1, 1, false};
    }
  };
  auto slow = std::make_shared<Slow>();
  Gateway g(GatewayMode::Live, slow, nullptr, std::nullopt, 4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 16; ++i) threads.emplace_back([&, i] { g.complete(sample_request("t", i + 1)); });
  for (auto& t : threads) t.join();
  EXPECT_LE(slow->peak.load(), 4);
  EXPECT_GE(slow->peak.load(), 2);
  EXPECT_EQ(g.provider_calls(), 16u);
}

TEST(ScriptedProvider, RulesMatchAndCycle) {
  ScriptedProvider p(json{{"rules",
                           {{{"stage", "generate"}, {"contains", {"broken"}}, {"fail", true}},
                            {{"stage", "generate"}, {"contains", {"alpha"}}, {"responses", {"A1", "A2"}}},
                            {{"responses", {"fallback"}}}}}});
  ChatRequest r = sample_request("alpha task", 1);
  r.stage = StageTag::Generate;
  EXPECT_EQ(p.chat(r).text, "A1");
  r.sample_index = 2;
  EXPECT_EQ(p.chat(r).text, "A2");
  r.sample_index = 3;
  EXPECT_EQ(p.chat(r).text, "A1");
  r.messages.back().content = "broken alpha";
  EXPECT_EQ(kind_of([&] { p.chat(r); }), ErrorKind::Provider);
  EXPECT_EQ(p.chat(sample_request("anything")).text, "fallback");
  ScriptedProvider none(json{{"rules", json::array()}});
  EXPECT_EQ(kind_of([&] { none.chat(sample_request()); }), ErrorKind::Provider);
}

TEST(Templates, StepsSpliceExamplesInIdOrderBeforeQuery) {
  std::vector<PromptExample> ex = {{"b", StageTag::Steps, "SECOND EXAMPLE BODY"},
                                   {"a", StageTag::Steps, "FIRST EXAMPLE BODY"}};
  auto msgs = render_template(StageTag::Steps, {{"query", "THE QUERY"}}, ex);
  ASSERT_EQ(msgs.size(), 2u);
  const std::string& user = msgs[1].content;
  auto first = user.find("FIRST EXAMPLE BODY");
  auto second = user.find("SECOND EXAMPLE BODY");
  auto query = user.find("THE QUERY");
  ASSERT_NE(first, std::string::npos);
  ASSERT_NE(second, std::string::npos);
  ASSERT_NE(query, std::string::npos);
  EXPECT_LT(first, second);
  EXPECT_LT(second, query);
  EXPECT_EQ(msgs, render_template(StageTag::Steps, {{"query", "THE QUERY"}}, ex));
}

TEST(Templates, ApiDescribeEmbedsSignatureDocAndBody) {
  auto msgs = render_template(StageTag::ApiDescribe, {{"qualified_name", "pkg.f"},
                                                      {"signature", "(a, b)"},
                                                      {"doc", "Adds {things}."},
                                                      {"body", "def f(a, b):\n    return {a: b}\n"}});
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].role, "system");
  EXPECT_EQ(msgs[1].role, "user");
  for (auto s : {"pkg.f", "(a, b)", "Adds {things}.", "return {a: b}"}) {
    EXPECT_NE(msgs[1].content.find(s), std::string::npos) << s;
  }
}

TEST(Templates, MissingSlotAndMismatchedExample) {
  try {
    render_template(StageTag::Steps, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Template);
    EXPECT_EQ(std::string(e.what()), "missing slot: query");
  }
  std::vector<PromptExample> wrong = {{"x", StageTag::Extend, "body"}};
  EXPECT_EQ(kind_of([&] { render_template(StageTag::Steps, {{"query", "q"}}, wrong); }), ErrorKind::Template);
  EXPECT_EQ(default_examples(StageTag::Steps).size(), 2u);
  EXPECT_EQ(default_examples(StageTag::ApiDescs).size(), 2u);
  EXPECT_EQ(template_version(StageTag::Generate), "generate@v1");
}

TEST(ExtractCode, FencedBlock) {
  auto c = extract_code("Here you go:\n```python\nimport os\n\ndef f(x):\n    return x + 1\n```\nDone.");
  ASSERT_TRUE(c);
  EXPECT_EQ(c->method, ExtractionMethod::FencedBlock);
  EXPECT_EQ(c->source, "def f(x):\n    return x + 1\n");
}

TEST(ExtractCode, BareCodeWithProseUsesDefScan) {
  // Expected span: lines 3-7 of the completion (decorator through the last body line).
  std::string completion =
      "The helper below normalizes keys.\n"
      "\n"
      "@cache\n"
      "def load(path,\n"
      "         strict=False):\n"
      "    data = read(path)\n"
      "    return data\n"
      "This should work for all inputs.\n";
  auto c = extract_code(completion);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->method, ExtractionMethod::HeuristicDefScan);
  EXPECT_EQ(c->source, "@cache\ndef load(path,\n         strict=False):\n    data = read(path)\n    return data\n");
}

TEST(ExtractCode, WholeCompletionAndProse) {
  auto c = extract_code("def g():\n    return 2\n");
  ASSERT_TRUE(c);
  EXPECT_EQ(c->method, ExtractionMethod::WholeCompletion);
  EXPECT_FALSE(extract_code("I cannot write this function because the task is ambiguous."));
  EXPECT_FALSE(extract_code(""));
  EXPECT_FALSE(extract_code("def is a keyword in Python."));
}

TEST(ExtractCode, IndentedMethodDocstringAndNestedDef) {
  std::string completion =
      "```\n"
      "class Db:\n"
      "    def fetch(self, key):\n"
      "        \"\"\"Fetch.\n"
      "\n"
      "Details at column zero.\n"
      "        \"\"\"\n"
      "        def inner():\n"
      "            return key\n"
      "# stray comment\n"
      "        return inner()\n"
      "\n"
      "    def other(self):\n"
      "        pass\n"
      "```\n";
  auto c = extract_code(completion);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->method, ExtractionMethod::FencedBlock);
  EXPECT_EQ(c->source,
            "def fetch(self, key):\n    \"\"\"Fetch.\n\nDetails at column zero.\n    \"\"\"\n"
            "    def inner():\n        return key\n# stray comment\n    return inner()\n");
}

TEST(ExtractCode, Idempotent) {
  std::vector<std::string> inputs = {
      "```python\ndef f(x):\n    return x\n```",
      "text\n    def g(a):\n        if a:\n            return 1\n        return 2\nmore text",
      "@dec(1)\n@dec2\nasync def h():\n    await x()\n\n\n",
      "def one(): return 1\n",
      "```\nnot code\n```\ndef k():\n    pass\n",
  };
  for (const auto& in : inputs) {
    auto first = extract_code(in);
    ASSERT_TRUE(first) << in;
    auto second = extract_code(first->source);
    ASSERT_TRUE(second) << first->source;
    EXPECT_EQ(second->source, first->source) << in;
  }
}
