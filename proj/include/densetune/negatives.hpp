#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "densetune/embeddings.hpp"
#include "densetune/exec.hpp"
#include "densetune/scores.hpp"

namespace densetune::negatives {

struct MiningConfig {
  std::size_t K = 19;
  /// A candidate is kept iff its teacher score < threshold_fraction * positive's.
  double threshold_fraction = 0.60;
  /// Retrieval depth scanned for candidates; deeper ranks backfill filtered slots.
  std::size_t mining_depth = 50;

  /// Raises UsageError unless 0 < threshold_fraction <= 1 and mining_depth >= K + 1.
  void validate() const;
};

/// One query, its positive, exactly K mined negatives, and the normalized
/// teacher scores ordered [positive, negatives...].
struct TrainingGroup {
  std::string query_id;
  std::string positive_id;
  std::vector<std::string> negative_ids;
  std::vector<double> teacher_scores;

  std::size_t K() const { return negative_ids.size(); }
};

struct Rejection {
  std::string query_id;
  std::string reason;
};

inline constexpr const char* kInsufficientNegatives = "insufficient negatives";
inline constexpr const char* kZeroPositiveScore = "positive teacher score is zero";

using MineResult = std::variant<TrainingGroup, Rejection>;

/// Scans the student's top `mining_depth` passages (positive excluded) in rank
/// order and keeps candidates under the de-noising threshold until K are
/// found. Rejects when fewer than K survive or the positive scores 0.
/// Missing embeddings or teacher scores raise DataError.
MineResult mine_negatives(const std::string& query_id, const std::string& positive_id,
                          const embeddings::EmbeddingStore& passage_embs,
                          const embeddings::EmbeddingStore& query_embs, const teacher::ScoreTable& teacher,
                          const MiningConfig& cfg);

struct MiningRequest {
  std::string query_id;
  std::string positive_id;
};

struct MiningOutcome {
  std::vector<TrainingGroup> groups;
  std::vector<Rejection> rejected;
};

/// mine_negatives over every request; outputs keep request order.
MiningOutcome mine_all(std::span<const MiningRequest> requests, const embeddings::EmbeddingStore& passage_embs,
                       const embeddings::EmbeddingStore& query_embs, const teacher::ScoreTable& teacher,
                       const MiningConfig& cfg, Exec exec = Exec::parallel);

/// Raises DataError when a group breaks its invariants: K negatives, distinct
/// and excluding the positive, K + 1 scores in [0, 1], and (when
/// `threshold_fraction` is given) every negative strictly under the threshold.
void check_group(const TrainingGroup& group, std::size_t K, std::optional<double> threshold_fraction = {});

/// JSON-Lines {"query_id", "positive_id", "negative_ids", "teacher_scores"}.
std::vector<TrainingGroup> load_groups(const std::filesystem::path& path);
void write_groups(const std::filesystem::path& path, std::span<const TrainingGroup> groups);

}  // namespace densetune::negatives
