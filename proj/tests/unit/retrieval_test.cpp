#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "alliance/error.hpp"
#include "alliance/retrieval.hpp"

namespace fs = std::filesystem;
using namespace alliance;

namespace {

const fs::path kFixtures = ALLIANCE_FIXTURES;

Vector random_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  Vector v;
  v.values.resize(dim);
  for (auto& x : v.values) x = d(rng);
  return v;
}

// Independent brute-force ranking in long double over the stored rows.
std::vector<ScoredId> brute_force(const VectorIndex& index, const Vector& q, std::size_t k) {
  std::vector<std::pair<long double, std::string>> all;
  long double qq = 0;
  for (float x : q.values) qq += static_cast<long double>(x) * x;
  for (std::size_t r = 0; r < index.size(); ++r) {
    auto row = index.vector(r);
    long double dot = 0, rr = 0;
    for (std::size_t d = 0; d < row.size(); ++d) {
      dot += static_cast<long double>(row[d]) * q.values[d];
      rr += static_cast<long double>(row[d]) * row[d];
    }
    all.emplace_back(dot / (std::sqrt(qq) * std::sqrt(rr)), index.id(r));
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<ScoredId> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) {
    out.push_back({all[i].second, static_cast<double>(all[i].first)});
  }
  return out;
}

VectorIndex random_index(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::vector<std::pair<std::string, Vector>> entries;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "v%05zu", i);
    entries.emplace_back(id, random_vector(rng, dim));
  }
  return VectorIndex::from_vectors("test", dim, SourceMode::TextDescription, entries);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("alliance_retrieval_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

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

TEST(Cosine, KnownValues) {
  Vector u{{1, 1, 0}};
  Vector v{{1, 0, 0}};
  EXPECT_NEAR(cosine(u, v), 0.7071067811865475244, 1e-9);
  EXPECT_EQ(fmt::format("{:.8f}", cosine(u, v)), "0.70710678");
  EXPECT_NEAR(cosine(u, u), 1.0, 1e-12);
  EXPECT_NEAR(cosine(Vector{{1, 0}}, Vector{{0, 3}}), 0.0, 1e-12);
  EXPECT_NEAR(cosine(Vector{{1, 2}}, Vector{{-1, -2}}), -1.0, 1e-12);
}

TEST(Cosine, SymmetricAndBounded) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    Vector a = random_vector(rng, 17);
    Vector b = random_vector(rng, 17);
    double ab = cosine(a, b);
    EXPECT_NEAR(ab, cosine(b, a), 1e-12);
    EXPECT_LE(std::abs(ab), 1.0);
  }
}

TEST(Cosine, ZeroVectorAndMismatchRejected) {
  EXPECT_EQ(kind_of([] { cosine(Vector{{0, 0}}, Vector{{1, 0}}); }), ErrorKind::ZeroVector);
  EXPECT_EQ(kind_of([] { cosine(Vector{{1, 0}}, Vector{{1, 0, 0}}); }), ErrorKind::Precondition);
}

TEST(HashEmbedder, DeterministicAndDiscriminative) {
  HashProjectionEmbedder e;
  EXPECT_EQ(e.dim(), 256u);
  EXPECT_EQ(e.id(), "hash-projection-v1/d256/s24301");
  Vector a = e.embed("read a text file from disk");
  EXPECT_EQ(a, e.embed("read a text file from disk"));
  Vector b = e.embed("compute the arithmetic mean");
  EXPECT_LT(cosine(a, b), 1.0);
  EXPECT_GT(cosine(a, e.embed("read text file")), cosine(a, b));
  HashProjectionEmbedder other(256, 1);
  EXPECT_NE(a, other.embed("read a text file from disk"));
}

TEST(HashEmbedder, TokenizerSplitsCamelCaseAndDropsStopwords) {
  auto toks = HashProjectionEmbedder::tokenize("parseConfig of the read_text file");
  EXPECT_EQ(toks, (std::vector<std::string>{"parse", "config", "read", "text", "file"}));
}

TEST(HashEmbedder, EmptyTextRejected) {
  HashProjectionEmbedder e;
  EXPECT_EQ(kind_of([&] { e.embed(""); }), ErrorKind::Precondition);
}

TEST(VectorIndex, BuildNormalizesFixtureUnits) {
  CorpusManifest m = scan_repository(kFixtures / "repo");
  ApiTable table = build_api_table(m);
  ASSERT_EQ(table.units.size(), 12u);
  std::vector<IndexItem> code_items, text_items;
  for (const auto& u : table.units) {
    code_items.push_back({u.id, u.body});
    text_items.push_back({u.id, u.qualified_name + " " + u.signature});
  }
  HashProjectionEmbedder e;
  VectorIndex code = VectorIndex::build(code_items, e, SourceMode::RawCode);
  VectorIndex text = VectorIndex::build(text_items, e, SourceMode::TextDescription);
  ASSERT_EQ(code.size(), 12u);
  for (std::size_t r = 0; r < code.size(); ++r) {
    double n = 0;
    for (float x : code.vector(r)) n += double(x) * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    EXPECT_EQ(code.id(r), table.units[r].id);
  }
  bool differs = false;
  for (std::size_t r = 0; r < code.size(); ++r) {
    auto a = code.vector(r);
    auto b = text.vector(r);
    differs |= !std::equal(a.begin(), a.end(), b.begin());
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(code.source_mode(), SourceMode::RawCode);
}

TEST(VectorIndex, DuplicateIdRejectedWithId) {
  HashProjectionEmbedder e;
  std::vector<IndexItem> items = {{"a", "alpha"}, {"b", "beta"}, {"a", "gamma"}};
  try {
    VectorIndex::build(items, e, SourceMode::TextDescription);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::Precondition);
    EXPECT_NE(std::string(err.what()).find("a"), std::string::npos);
  }
}

TEST(VectorIndex, TopKMatchesBruteForce) {
  std::mt19937_64 rng(2024);
  VectorIndex index = random_index(rng, 1000, 64);
  for (int trial = 0; trial < 20; ++trial) {
    Vector q = random_vector(rng, 64);
    for (std::size_t k : {1u, 3u, 5u, 10u}) {
      auto got = index.top_k(q, k);
      auto want = brute_force(index, q, k);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].id, want[i].id) << "trial " << trial << " k " << k << " rank " << i;
        EXPECT_NEAR(got[i].score, want[i].score, 1e-9);
      }
    }
  }
}

TEST(VectorIndex, TiesBreakByAscendingId) {
  std::vector<std::pair<std::string, Vector>> entries = {
      {"c", Vector{{1, 0}}}, {"a", Vector{{2, 0}}}, {"b", Vector{{0, 1}}}, {"d", Vector{{5, 0}}}};
  VectorIndex index = VectorIndex::from_vectors("t", 2, SourceMode::TextDescription, entries);
  auto got = index.top_k(Vector{{1, 0}}, 3);
  ASSERT_EQ(got.size(), 3u);
  EXPECT_EQ(got[0].id, "a");
  EXPECT_EQ(got[1].id, "c");
  EXPECT_EQ(got[2].id, "d");
}

TEST(VectorIndex, SelfRetrievalAndScaleInvariance) {
  std::mt19937_64 rng(5);
  VectorIndex index = random_index(rng, 200, 32);
  for (std::size_t r = 0; r < index.size(); r += 17) {
    auto row = index.vector(r);
    Vector q{{row.begin(), row.end()}};
    auto best = index.top_k(q, 1);
    ASSERT_EQ(best.size(), 1u);
    EXPECT_EQ(best[0].id, index.id(r));
    EXPECT_NEAR(best[0].score, 1.0, 1e-6);
    Vector scaled = q;
    for (auto& x : scaled.values) x *= 7.5f;
    auto a = index.top_k(q, 5);
    auto b = index.top_k(scaled, 5);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a[i].id, b[i].id);
  }
}

TEST(VectorIndex, InsertionOrderDoesNotChangeRanking) {
  std::mt19937_64 rng(9);
  std::vector<std::pair<std::string, Vector>> entries;
  for (int i = 0; i < 100; ++i) entries.emplace_back("id" + std::to_string(i), random_vector(rng, 16));
  VectorIndex a = VectorIndex::from_vectors("t", 16, SourceMode::TextDescription, entries);
  std::shuffle(entries.begin(), entries.end(), rng);
  VectorIndex b = VectorIndex::from_vectors("t", 16, SourceMode::TextDescription, entries);
  Vector q = random_vector(rng, 16);
  auto ra = a.top_k(q, 10);
  auto rb = b.top_k(q, 10);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(ra[i].id, rb[i].id);
}

TEST(VectorIndex, EdgeCases) {
  VectorIndex empty;
  EXPECT_TRUE(empty.top_k(Vector{{1, 0}}, 3).empty());
  std::vector<std::pair<std::string, Vector>> entries = {{"x", Vector{{1, 0}}}, {"y", Vector{{0, 1}}}};
  VectorIndex index = VectorIndex::from_vectors("t", 2, SourceMode::TextDescription, entries);
  EXPECT_EQ(index.top_k(Vector{{1, 1}}, 10).size(), 2u);
  EXPECT_EQ(kind_of([&] { index.top_k(Vector{{1, 1}}, 0); }), ErrorKind::Precondition);
  EXPECT_EQ(kind_of([&] { index.top_k(Vector{{0, 0}}, 1); }), ErrorKind::ZeroVector);
  EXPECT_EQ(kind_of([&] { index.top_k(Vector{{1, 0, 0}}, 1); }), ErrorKind::Precondition);
  std::vector<std::pair<std::string, Vector>> zero = {{"z", Vector{{0, 0}}}};
  EXPECT_EQ(kind_of([&] { VectorIndex::from_vectors("t", 2, SourceMode::TextDescription, zero); }),
            ErrorKind::ZeroVector);
}

TEST(VectorIndex, SaveLoadRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(77);
  VectorIndex index = random_index(rng, 50, 24);
  index.save(dir.path / "x.index");
  VectorIndex back = VectorIndex::load(dir.path / "x.index");
  ASSERT_EQ(back.size(), index.size());
  EXPECT_EQ(back.dim(), index.dim());
  EXPECT_EQ(back.provider_id(), "test");
  Vector q = random_vector(rng, 24);
  EXPECT_EQ(back.top_k(q, 7), index.top_k(q, 7));
}

TEST(VectorIndex, CorruptedFilesRejected) {
  TempDir dir;
  std::vector<std::pair<std::string, Vector>> entries = {{"x", Vector{{3, 4}}}};
  VectorIndex::from_vectors("t", 2, SourceMode::RawCode, entries).save(dir.path / "a.index");
  std::string bytes;
  {
    std::ifstream f(dir.path / "a.index", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream(dir.path / "b.index", std::ios::binary | std::ios::trunc) << b;
  };
  std::string bad = bytes;
  bad[bad.size() - 1] = 0x40;  // high byte of the last float
  write(bad);
  EXPECT_EQ(kind_of([&] { VectorIndex::load(dir.path / "b.index"); }), ErrorKind::Parse);
  write(bytes.substr(0, bytes.size() - 2));
  EXPECT_EQ(kind_of([&] { VectorIndex::load(dir.path / "b.index"); }), ErrorKind::Parse);
  write(bytes + "junk");
  EXPECT_EQ(kind_of([&] { VectorIndex::load(dir.path / "b.index"); }), ErrorKind::Parse);
  write("NOPE" + bytes.substr(4));
  EXPECT_EQ(kind_of([&] { VectorIndex::load(dir.path / "b.index"); }), ErrorKind::Parse);
}

TEST(RetrieveApis, TopOnePerDescriptionThenDedup) {
  HashProjectionEmbedder e;
  std::vector<IndexItem> items = {{"u1", "read text file from disk"},
                                  {"u2", "parse configuration key value lines"},
                                  {"u3", "normalize key lowercase strip"},
                                  {"u4", "compute arithmetic mean numbers"}};
  VectorIndex index = VectorIndex::build(items, e, SourceMode::TextDescription);
  auto desc = [&](std::string id, std::string text) {
    ApiDescription d;
    d.description_id = std::move(id);
    d.text = std::move(text);
    d.vector = e.embed(d.text);
    return d;
  };
  std::vector<ApiDescription> ds = {desc("d1", "read text file"), desc("d2", "parse configuration lines"),
                                    desc("d3", "normalize key"), desc("d4", "read file text disk")};
  ApiRetrievalSet got = retrieve_apis(ds, index);
  ASSERT_EQ(got.pairs.size(), 4u);
  EXPECT_EQ(got.pairs[0].api_id, "u1");
  EXPECT_EQ(got.pairs[1].api_id, "u2");
  EXPECT_EQ(got.pairs[2].api_id, "u3");
  EXPECT_EQ(got.pairs[3].api_id, "u1");
  EXPECT_EQ(got.dedup, (std::vector<std::string>{"u1", "u2", "u3"}));

  EXPECT_TRUE(retrieve_apis({}, index).dedup.empty());
  ApiDescription unembedded;
  unembedded.description_id = "x";
  std::vector<ApiDescription> bad = {unembedded};
  EXPECT_EQ(kind_of([&] { retrieve_apis(bad, index); }), ErrorKind::Precondition);
}

TEST(RetrieveSimilar, ExcludesTargetAndMatchesOracle) {
  std::mt19937_64 rng(31);
  std::vector<CodeWindow> windows;
  std::vector<std::pair<std::string, Vector>> entries;
  for (int i = 0; i < 40; ++i) {
    CodeWindow w{i < 20 ? "a.py" : "b.py", 1 + (i % 20) * 10, 20 + (i % 20) * 10, "text"};
    windows.push_back(w);
    entries.emplace_back(w.key(), random_vector(rng, 16));
  }
  VectorIndex index = VectorIndex::from_vectors("t", 16, SourceMode::RawCode, entries);
  LineSpan target{45, 60};
  for (int trial = 0; trial < 10; ++trial) {
    Vector q = random_vector(rng, 16);
    auto got = retrieve_similar(q, index, windows, "a.py", target, 5);
    std::vector<std::string> want;
    for (const auto& s : brute_force(index, q, index.size())) {
      auto w = std::find_if(windows.begin(), windows.end(), [&](const CodeWindow& c) { return c.key() == s.id; });
      if (w->path == "a.py" && w->span().overlaps(target)) continue;
      want.push_back(s.id);
      if (want.size() == 5) break;
    }
    ASSERT_EQ(got.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(got[i].window.key(), want[i]);
      EXPECT_FALSE(got[i].window.path == "a.py" && got[i].window.span().overlaps(target));
    }
  }
}

TEST(RetrieveSimilar, FewerWindowsThanK) {
  std::vector<CodeWindow> windows = {{"a.py", 1, 20, "x"}, {"a.py", 11, 30, "y"}, {"b.py", 1, 5, "z"}};
  std::vector<std::pair<std::string, Vector>> entries;
  std::mt19937_64 rng(1);
  for (const auto& w : windows) entries.emplace_back(w.key(), random_vector(rng, 8));
  VectorIndex index = VectorIndex::from_vectors("t", 8, SourceMode::RawCode, entries);
  auto got = retrieve_similar(random_vector(rng, 8), index, windows, "c.py", LineSpan{1, 3}, 5);
  EXPECT_EQ(got.size(), 3u);
}
