#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "densetune/embeddings.hpp"
#include "densetune/io.hpp"
#include "densetune/scores.hpp"

namespace densetune::eval {

/// Graded judgments, ordered by (query_id, passage_id).
class Qrels {
 public:
  using Judgments = std::map<std::string, int, std::less<>>;

  /// Raises DataError on a negative grade or a duplicate pair.
  void add(const std::string& query_id, const std::string& passage_id, int grade);

  const std::map<std::string, Judgments, std::less<>>& queries() const { return queries_; }
  /// 0 for unjudged pairs.
  int grade(std::string_view query_id, std::string_view passage_id) const;
  std::size_t relevant_count(std::string_view query_id) const;
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

 private:
  std::map<std::string, Judgments, std::less<>> queries_;
  std::size_t size_ = 0;
};

struct RunEntry {
  std::string passage_id;
  double score = 0.0;
};

inline constexpr std::size_t kMaxRunDepth = 1000;

/// Ranked lists per query. Order within a list is the ranking; scores are
/// non-increasing and lists hold at most kMaxRunDepth entries.
class RunFile {
 public:
  explicit RunFile(std::string tag = "densetune") : tag_(std::move(tag)) {}

  /// Raises DataError when the list is too long, repeats a passage, has
  /// increasing scores, or the query already exists.
  void set(const std::string& query_id, std::vector<RunEntry> ranked);

  const std::map<std::string, std::vector<RunEntry>, std::less<>>& queries() const { return queries_; }
  const std::vector<RunEntry>* find(std::string_view query_id) const;
  const std::string& tag() const { return tag_; }

 private:
  std::string tag_;
  std::map<std::string, std::vector<RunEntry>, std::less<>> queries_;
};

RunFile run_from_retrieval(std::span<const embeddings::RetrievalResult> results, std::string tag);

/// Per-query values keyed by query id plus the mean over scored queries.
/// `missing`: judged queries absent from the run (scored 0, kept in the mean).
/// `excluded`: judged queries without any relevant passage (left out of the mean).
struct MetricResult {
  std::map<std::string, double> per_query;
  double mean = 0.0;
  std::vector<std::string> missing;
  std::vector<std::string> excluded;
};

/// Exponential-gain NDCG: gain (2^g - 1), discount log2(rank + 1).
MetricResult ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k = 10);
/// |relevant in top k| / |relevant|, relevant meaning grade >= 1.
MetricResult recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k = 100);
/// Average precision over the full run depth, averaged over queries.
MetricResult map_metric(const RunFile& run, const Qrels& qrels);

/// Reorders each query's first `depth` entries by teacher score (descending,
/// ties by passage id); later entries keep their order. The reranked block
/// carries teacher scores; tail scores become block_min - 1, block_min - 2, ...
/// Raises DataError naming any pair without a teacher score.
RunFile rerank_run(const RunFile& run, const teacher::ScoreTable& teacher, std::size_t depth = 100);

/// Standard report: NDCG@10, Recall@100, MAP.
struct MetricsSummary {
  MetricResult ndcg10;
  MetricResult recall100;
  MetricResult map;
};
MetricsSummary evaluate_run(const RunFile& run, const Qrels& qrels);
/// {"ndcg@10": {"per_query", "mean", "missing", "excluded"}, "recall@100": ..., "map": ...}
json metrics_to_json(const MetricsSummary& summary);

/// "qid 0 docid grade" per line.
Qrels load_qrels(const std::filesystem::path& path);
void write_qrels(const std::filesystem::path& path, const Qrels& qrels);
/// "qid Q0 docid rank score tag" per line; score printed with 6 decimals.
RunFile load_run(const std::filesystem::path& path);
void write_run(const std::filesystem::path& path, const RunFile& run);

}  // namespace densetune::eval
