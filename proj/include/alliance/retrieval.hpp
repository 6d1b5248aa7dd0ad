#pragma once

// Embedding providers, the exact cosine-similarity index, and the two
// retrieval routines built on it (top-1 API per description, top-k similar
// code windows).

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "alliance/corpus.hpp"
#include "alliance/http.hpp"

namespace alliance {

struct Vector {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const Vector&, const Vector&) = default;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;

  /// Rejects empty text and non-finite or wrongly sized results.
  Vector embed(std::string_view text);

 protected:
  virtual std::vector<float> embed_raw(std::string_view text) = 0;
};

/// Offline provider: each token seeds a pseudo-random projection and a text
/// embeds to the sum over its tokens. Deterministic across platforms.
class HashProjectionEmbedder : public EmbeddingProvider {
 public:
  explicit HashProjectionEmbedder(std::size_t dim = 256, std::uint64_t seed = 0x5eed);

  std::string id() const override;
  std::size_t dim() const override { return dim_; }

  static std::vector<std::string> tokenize(std::string_view text);

 protected:
  std::vector<float> embed_raw(std::string_view text) override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// OpenAI-compatible `/embeddings` endpoint.
class HttpEmbedder : public EmbeddingProvider {
 public:
  HttpEmbedder(std::shared_ptr<HttpTransport> transport, std::string base_url, std::string api_key,
               std::string model, std::size_t dim, RetryPolicy retry = {});

  std::string id() const override { return "http:" + model_; }
  std::size_t dim() const override { return dim_; }

 protected:
  std::vector<float> embed_raw(std::string_view text) override;

 private:
  std::shared_ptr<HttpTransport> transport_;
  std::string base_url_;
  std::string api_key_;
  std::string model_;
  std::size_t dim_;
  RetryPolicy retry_;
};

/// dot(u, v) / (|u| |v|), clamped to [-1, 1]. Throws on dimension mismatch
/// or a zero vector.
double cosine(const Vector& u, const Vector& v);

enum class SourceMode { TextDescription, RawCode };

std::string_view to_string(SourceMode mode);
SourceMode source_mode_from_string(std::string_view s);

struct IndexItem {
  std::string id;
  std::string text;
};

struct ScoredId {
  std::string id;
  double score = 0.0;

  friend bool operator==(const ScoredId&, const ScoredId&) = default;
};

class VectorIndex {
 public:
  VectorIndex() = default;

  /// Embeds every item; vectors are unit-normalized and kept in input order.
  static VectorIndex build(std::span<const IndexItem> items, EmbeddingProvider& provider,
                           SourceMode mode);

  /// Normalizes already computed vectors.
  static VectorIndex from_vectors(std::string provider_id, std::size_t dim, SourceMode mode,
                                  std::span<const std::pair<std::string, Vector>> entries);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t dim() const { return dim_; }
  SourceMode source_mode() const { return mode_; }
  const std::string& provider_id() const { return provider_id_; }
  const std::string& id(std::size_t row) const { return ids_[row]; }
  std::span<const float> vector(std::size_t row) const {
    return {data_.data() + row * dim_, dim_};
  }

  /// Exact ranking by descending cosine; ties by ascending id.
  std::vector<ScoredId> top_k(const Vector& query, std::size_t k) const;

  /// Scores of every row against `query`, in row order.
  std::vector<double> scores(const Vector& query) const;

  void save(const std::filesystem::path& file) const;
  static VectorIndex load(const std::filesystem::path& file);

 private:
  std::string provider_id_;
  std::size_t dim_ = 0;
  SourceMode mode_ = SourceMode::TextDescription;
  std::vector<std::string> ids_;
  std::vector<float> data_;    // row-major, unit rows
  std::vector<double> norms_;  // norms of the stored float rows
};

enum class DescriptionStage { Repo, Predicted, Extended };

std::string_view to_string(DescriptionStage stage);
DescriptionStage description_stage_from_string(std::string_view s);

struct ApiDescription {
  std::string description_id;
  std::string text;
  DescriptionStage stage = DescriptionStage::Predicted;
  std::optional<int> origin_step;
  std::optional<std::string> api_id;  // repo stage only
  bool degraded = false;              // repo stage fallback text
  std::optional<Vector> vector;
};

struct ApiRetrieval {
  std::string description_id;
  std::string api_id;
  double score = 0.0;
};

struct ApiRetrievalSet {
  std::vector<ApiRetrieval> pairs;
  std::vector<std::string> dedup;  // first-retrieval order
};

/// Top-1 API for each description, then first-occurrence deduplication.
/// `exclude_id` (the unit being generated) is never returned.
ApiRetrievalSet retrieve_apis(std::span<const ApiDescription> descriptions, const VectorIndex& index,
                              std::string_view exclude_id = {});

struct SimilarWindow {
  CodeWindow window;
  double score = 0.0;
};

/// Top-k windows, skipping any that overlap `exclude_span` in `exclude_path`.
std::vector<SimilarWindow> retrieve_similar(const Vector& target_key, const VectorIndex& window_index,
                                            std::span<const CodeWindow> windows,
                                            std::string_view exclude_path, const LineSpan& exclude_span,
                                            std::size_t k = 5);

}  // namespace alliance
