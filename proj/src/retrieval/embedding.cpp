#include <array>
#include <cctype>
#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "alliance/error.hpp"
#include "alliance/hashing.hpp"
#include "alliance/retrieval.hpp"

namespace alliance {

namespace {

constexpr std::array<std::string_view, 40> kStopwords = {
    "a",    "an",   "and",  "are",   "as",    "at",   "be",   "by",    "for",  "from",
    "has",  "in",   "into", "is",    "it",    "its",  "of",   "on",    "or",   "that",
    "the",  "this", "to",   "was",   "with",  "will", "each", "every", "all",  "any",
    "then", "than", "so",   "such",  "these", "those", "it's", "we",   "you",  "our"};

bool is_stopword(std::string_view w) {
  for (auto s : kStopwords) {
    if (s == w) return true;
  }
  return false;
}

struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  // uniform in [-1, 1)
  double next_signed() { return static_cast<double>(next() >> 11) * 0x1.0p-52 - 1.0; }
};

}  // namespace

Vector EmbeddingProvider::embed(std::string_view text) {
  if (text.empty()) throw Error(ErrorKind::Precondition, "embed: text must be non-empty");
  std::vector<float> v = embed_raw(text);
  if (v.size() != dim()) {
    throw Error(ErrorKind::Provider,
                fmt::format("embedding provider {} returned dim {} (expected {})", id(), v.size(), dim()));
  }
  for (float x : v) {
    if (!std::isfinite(x)) throw Error(ErrorKind::Provider, "embedding provider returned a non-finite value");
  }
  return Vector{std::move(v)};
}

HashProjectionEmbedder::HashProjectionEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw Error(ErrorKind::Precondition, "embedding dimension must be positive");
}

std::string HashProjectionEmbedder::id() const {
  return fmt::format("hash-projection-v1/d{}/s{}", dim_, seed_);
}

std::vector<std::string> HashProjectionEmbedder::tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !is_stopword(cur)) out.push_back(cur);
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    auto c = static_cast<unsigned char>(text[i]);
    if (!std::isalnum(c)) {
      flush();
      continue;
    }
    // camelCase boundary
    if (std::isupper(c) && i > 0 && std::islower(static_cast<unsigned char>(text[i - 1]))) flush();
    cur.push_back(static_cast<char>(std::tolower(c)));
  }
  flush();
  return out;
}

std::vector<float> HashProjectionEmbedder::embed_raw(std::string_view text) {
  std::vector<std::string> tokens = tokenize(text);
  if (tokens.empty()) tokens.emplace_back(text);
  std::vector<double> acc(dim_, 0.0);
  for (const auto& tok : tokens) {
    SplitMix64 rng{fnv1a64(tok) ^ seed_};
    for (std::size_t d = 0; d < dim_; ++d) acc[d] += rng.next_signed();
  }
  return {acc.begin(), acc.end()};
}

HttpEmbedder::HttpEmbedder(std::shared_ptr<HttpTransport> transport, std::string base_url,
                           std::string api_key, std::string model, std::size_t dim, RetryPolicy retry)
    : transport_(std::move(transport)),
      base_url_(std::move(base_url)),
      api_key_(std::move(api_key)),
      model_(std::move(model)),
      dim_(dim),
      retry_(std::move(retry)) {}

std::vector<float> HttpEmbedder::embed_raw(std::string_view text) {
  HttpRequest req;
  req.url = base_url_ + "/embeddings";
  req.headers = {{"Authorization", "Bearer " + api_key_}};
  req.body = nlohmann::json{{"model", model_}, {"input", std::string(text)}}.dump();
  std::string last_error;
  for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
    HttpResponse res = transport_->post(req);
    if (res.status >= 200 && res.status < 300) {
      auto j = nlohmann::json::parse(res.body, nullptr, false);
      if (j.is_discarded() || !j.contains("data") || j["data"].empty()) {
        throw Error(ErrorKind::Provider, "malformed embedding response");
      }
      return j["data"][0].at("embedding").get<std::vector<float>>();
    }
    if (res.status >= 400 && res.status < 500) {
      throw Error(ErrorKind::Config, fmt::format("embedding request rejected ({}): {}", res.status, res.body));
    }
    last_error = res.status == 0 ? res.error : fmt::format("HTTP {}", res.status);
    if (attempt < retry_.attempts) retry_.pause(attempt);
  }
  throw Error(ErrorKind::Provider, "embedding request failed after retries: " + last_error);
}

double cosine(const Vector& u, const Vector& v) {
  if (u.dim() != v.dim()) {
    throw Error(ErrorKind::Precondition, fmt::format("cosine: dimension mismatch {} vs {}", u.dim(), v.dim()));
  }
  double uu = 0.0;
  double vv = 0.0;
  double uv = 0.0;
  for (std::size_t i = 0; i < u.dim(); ++i) {
    double a = u.values[i];
    double b = v.values[i];
    uu += a * a;
    vv += b * b;
    uv += a * b;
  }
  if (uu == 0.0 || vv == 0.0) throw Error(ErrorKind::ZeroVector, "cosine: zero vector");
  return std::clamp(uv / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

}  // namespace alliance
