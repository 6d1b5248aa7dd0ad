#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "alliance/error.hpp"
#include "alliance/kernels.hpp"
#include "alliance/retrieval.hpp"

namespace alliance {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'A', 'L', 'V', 'X'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr double kNormTolerance = 1e-6;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(const std::string& buf, const fs::path& file) : buf_(buf), file_(file) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw Error(ErrorKind::Parse, "truncated index file " + file_.string());
  }

  const std::string& buf_;
  const fs::path& file_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(SourceMode mode) {
  return mode == SourceMode::RawCode ? "raw_code" : "text_description";
}

SourceMode source_mode_from_string(std::string_view s) {
  if (s == "raw_code") return SourceMode::RawCode;
  if (s == "text_description") return SourceMode::TextDescription;
  throw Error(ErrorKind::Config, "unknown source mode: " + std::string(s));
}

VectorIndex VectorIndex::from_vectors(std::string provider_id, std::size_t dim, SourceMode mode,
                                      std::span<const std::pair<std::string, Vector>> entries) {
  VectorIndex index;
  index.provider_id_ = std::move(provider_id);
  index.dim_ = dim;
  index.mode_ = mode;
  std::set<std::string> seen;
  std::vector<std::string> dups;
  for (const auto& [id, v] : entries) {
    if (!seen.insert(id).second) dups.push_back(id);
  }
  if (!dups.empty()) {
    throw Error(ErrorKind::Precondition, fmt::format("duplicate index ids: {}", fmt::join(dups, ", ")));
  }
  index.ids_.reserve(entries.size());
  index.data_.reserve(entries.size() * dim);
  const auto& k = kernels::active();
  for (const auto& [id, v] : entries) {
    if (v.dim() != dim) {
      throw Error(ErrorKind::Precondition,
                  fmt::format("vector for {} has dim {} (index dim {})", id, v.dim(), dim));
    }
    double norm = std::sqrt(k.sqnorm(v.values.data(), dim));
    if (norm == 0.0) throw Error(ErrorKind::ZeroVector, "cannot index zero vector for " + id);
    std::size_t row = index.ids_.size();
    index.ids_.push_back(id);
    for (float x : v.values) index.data_.push_back(static_cast<float>(x / norm));
    index.norms_.push_back(std::sqrt(k.sqnorm(index.data_.data() + row * dim, dim)));
  }
  return index;
}

VectorIndex VectorIndex::build(std::span<const IndexItem> items, EmbeddingProvider& provider, SourceMode mode) {
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (!seen.insert(item.id).second) {
      throw Error(ErrorKind::Precondition, "duplicate index id: " + item.id);
    }
  }
  std::vector<std::pair<std::string, Vector>> entries;
  entries.reserve(items.size());
  std::vector<std::string> failed;
  std::string first_error;
  for (const auto& item : items) {
    try {
      entries.emplace_back(item.id, provider.embed(item.text));
    } catch (const Error& e) {
      failed.push_back(item.id);
      if (first_error.empty()) first_error = e.what();
    }
  }
  if (!failed.empty()) {
    throw Error(ErrorKind::Provider, fmt::format("index build aborted; embedding failed for: {} ({})",
                                                 fmt::join(failed, ", "), first_error));
  }
  return from_vectors(provider.id(), provider.dim(), mode, entries);
}

std::vector<double> VectorIndex::scores(const Vector& query) const {
  if (query.dim() != dim_ && !empty()) {
    throw Error(ErrorKind::Precondition,
                fmt::format("query dim {} does not match index dim {}", query.dim(), dim_));
  }
  std::vector<double> out(size());
  if (empty()) return out;
  const auto& k = kernels::active();
  double qnorm = std::sqrt(k.sqnorm(query.values.data(), dim_));
  if (qnorm == 0.0) throw Error(ErrorKind::ZeroVector, "query vector is zero");
  k.dot_rows(data_.data(), size(), dim_, query.values.data(), out.data());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = std::clamp(out[r] / (qnorm * norms_[r]), -1.0, 1.0);
  return out;
}

std::vector<ScoredId> VectorIndex::top_k(const Vector& query, std::size_t k) const {
  if (k == 0) throw Error(ErrorKind::Precondition, "top_k requires k >= 1");
  if (empty()) return {};
  std::vector<double> s = scores(query);
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t take = std::min(k, size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (s[a] != s[b]) return s[a] > s[b];
                      return ids_[a] < ids_[b];
                    });
  std::vector<ScoredId> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back({ids_[order[i]], s[order[i]]});
  return out;
}

void VectorIndex::save(const fs::path& file) const {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  put_le<std::uint64_t>(out, size());
  put_le<std::uint8_t>(out, mode_ == SourceMode::RawCode ? 1 : 0);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(provider_id_.size()));
  out += provider_id_;
  for (std::size_t r = 0; r < size(); ++r) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ids_[r].size()));
    out += ids_[r];
    for (float x : vector(r)) put_f32(out, x);
  }
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
  }
  fs::rename(tmp, file);
}

VectorIndex VectorIndex::load(const fs::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot read index " + file.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader in(buf, file);
  if (in.bytes(4) != std::string(kMagic, 4)) throw Error(ErrorKind::Parse, "not an index file: " + file.string());
  if (in.le<std::uint32_t>() != kFormatVersion) {
    throw Error(ErrorKind::Parse, "unsupported index format version in " + file.string());
  }
  VectorIndex index;
  index.dim_ = in.le<std::uint32_t>();
  std::uint64_t count = in.le<std::uint64_t>();
  index.mode_ = in.le<std::uint8_t>() == 1 ? SourceMode::RawCode : SourceMode::TextDescription;
  index.provider_id_ = in.bytes(in.le<std::uint16_t>());
  const auto& k = kernels::active();
  for (std::uint64_t r = 0; r < count; ++r) {
    index.ids_.push_back(in.bytes(in.le<std::uint32_t>()));
    for (std::size_t d = 0; d < index.dim_; ++d) index.data_.push_back(in.f32());
    double norm = std::sqrt(k.sqnorm(index.data_.data() + r * index.dim_, index.dim_));
    if (std::abs(norm - 1.0) > kNormTolerance) {
      throw Error(ErrorKind::Parse, fmt::format("index entry {} has norm {} (expected 1)", index.ids_.back(), norm));
    }
    index.norms_.push_back(norm);
  }
  if (!in.at_end()) {
    throw Error(ErrorKind::Parse, fmt::format("index file {} holds more data than its count {}", file.string(), count));
  }
  return index;
}

std::string_view to_string(DescriptionStage stage) {
  switch (stage) {
    case DescriptionStage::Repo:
      return "repo";
    case DescriptionStage::Predicted:
      return "predicted";
    case DescriptionStage::Extended:
      return "extended";
  }
  return "?";
}

DescriptionStage description_stage_from_string(std::string_view s) {
  if (s == "repo") return DescriptionStage::Repo;
  if (s == "predicted") return DescriptionStage::Predicted;
  if (s == "extended") return DescriptionStage::Extended;
  throw Error(ErrorKind::Parse, "unknown description stage: " + std::string(s));
}

ApiRetrievalSet retrieve_apis(std::span<const ApiDescription> descriptions, const VectorIndex& index,
                              std::string_view exclude_id) {
  ApiRetrievalSet out;
  std::set<std::string> seen;
  for (const auto& d : descriptions) {
    if (!d.vector) throw Error(ErrorKind::Precondition, "description " + d.description_id + " is not embedded");
    auto best = index.top_k(*d.vector, exclude_id.empty() ? 1 : 2);
    if (!best.empty() && best[0].id == exclude_id) best.erase(best.begin());
    if (best.empty()) continue;
    out.pairs.push_back({d.description_id, best[0].id, best[0].score});
    if (seen.insert(best[0].id).second) out.dedup.push_back(best[0].id);
  }
  return out;
}

std::vector<SimilarWindow> retrieve_similar(const Vector& target_key, const VectorIndex& window_index,
                                            std::span<const CodeWindow> windows, std::string_view exclude_path,
                                            const LineSpan& exclude_span, std::size_t k) {
  if (window_index.empty() || k == 0) return {};
  std::unordered_map<std::string, const CodeWindow*> by_key;
  for (const auto& w : windows) by_key.emplace(w.key(), &w);
  std::vector<SimilarWindow> out;
  for (const ScoredId& hit : window_index.top_k(target_key, window_index.size())) {
    auto it = by_key.find(hit.id);
    if (it == by_key.end()) continue;
    const CodeWindow& w = *it->second;
    if (w.path == exclude_path && w.span().overlaps(exclude_span)) continue;
    out.push_back({w, hit.score});
    if (out.size() == k) break;
  }
  return out;
}

}  // namespace alliance
