#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "densetune/exec.hpp"

namespace densetune::embeddings {

/// Rows whose stored norm deviates from 1 by more than this raise a load warning.
inline constexpr double kNormTolerance = 1e-3;

/// Id-indexed matrix of unit-norm float vectors. Immutable once built.
class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::size_t dim);

  /// Re-normalizes `vector` to unit norm. Raises DataError on a duplicate id,
  /// a dimension mismatch, or a zero/non-finite vector.
  void add(std::string id, std::span<const float> vector);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::span<const std::string> ids() const { return ids_; }
  const std::string& id(std::size_t row) const { return ids_[row]; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::optional<std::size_t> find(std::string_view id) const;
  /// Raises DataError naming `id` when absent.
  std::span<const float> at(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id).has_value(); }

  /// Ids of rows whose input norm was outside 1 +/- kNormTolerance.
  std::span<const std::string> norm_warnings() const { return warnings_; }

  /// Rows whose ids satisfy `keep`, in the original order.
  template <typename Pred>
  EmbeddingStore filter(Pred keep) const {
    EmbeddingStore out(dim_);
    for (std::size_t i = 0; i < size(); ++i) {
      if (keep(ids_[i])) out.add(ids_[i], row(i));
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> warnings_;
};

/// dot(u, v) / (|u| |v|), accumulated in double. Raises NumericError on a zero vector.
double cosine_similarity(std::span<const double> u, std::span<const double> v);
double cosine_similarity(std::span<const float> u, std::span<const float> v);

struct Hit {
  std::string passage_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based
};

struct RetrievalResult {
  std::string query_id;
  std::vector<Hit> ranked;
};

using IdSet = std::unordered_set<std::string>;

/// Exact cosine top-k. Ties are broken by ascending passage id. Raises
/// UsageError for k == 0 and DataError for an empty store.
RetrievalResult top_k(std::string query_id, std::span<const float> query,
                      const EmbeddingStore& store, std::size_t k, const IdSet* exclude = nullptr);

/// top_k for every row of `queries` (or only `query_ids`, in that order).
std::vector<RetrievalResult> top_k_batch(const EmbeddingStore& queries,
                                         const EmbeddingStore& passages, std::size_t k,
                                         Exec exec = Exec::parallel,
                                         std::span<const std::string> query_ids = {});

/// Reads either format, detected by the "EMBF0001" magic. When `expected_dim`
/// is set, a differing dimension is rejected.
EmbeddingStore load_embeddings(const std::filesystem::path& path,
                               std::optional<std::size_t> expected_dim = std::nullopt);
void write_embeddings_jsonl(const std::filesystem::path& path, const EmbeddingStore& store);
/// "EMBF0001", u32 dim, u64 count, then per row: u16 id length, id bytes,
/// dim little-endian f32.
void write_embeddings_binary(const std::filesystem::path& path, const EmbeddingStore& store);

}  // namespace densetune::embeddings
