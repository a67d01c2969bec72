#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace densetune::teacher {

struct ScoreEntry {
  std::string query_id;
  std::string passage_id;
  double score = 0.0;
};

/// (query_id, passage_id) -> score, keeping insertion order for output.
/// Used both for raw teacher logits and for normalized scores.
class ScoreTable {
 public:
  /// Raises DataError on a duplicate pair or a non-finite score.
  void add(std::string query_id, std::string passage_id, double score);

  std::optional<double> find(std::string_view query_id, std::string_view passage_id) const;
  /// Raises DataError naming the pair when absent.
  double at(std::string_view query_id, std::string_view passage_id) const;

  std::span<const ScoreEntry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Entries whose query id satisfies `keep`, original order preserved.
  template <typename Pred>
  ScoreTable filter_queries(Pred keep) const {
    ScoreTable out;
    for (const auto& e : entries_) {
      if (keep(e.query_id)) out.add(e.query_id, e.passage_id, e.score);
    }
    return out;
  }

 private:
  static std::string key(std::string_view query_id, std::string_view passage_id);

  std::vector<ScoreEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace densetune::teacher
