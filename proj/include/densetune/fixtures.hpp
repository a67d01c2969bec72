#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "densetune/corpus.hpp"
#include "densetune/embeddings.hpp"
#include "densetune/eval.hpp"
#include "densetune/negatives.hpp"
#include "densetune/querygen.hpp"
#include "densetune/scores.hpp"
#include "densetune/trainer.hpp"

// Synthetic data with planted structure, shared by the tests, the acceptance
// suite, the benchmark, and the fixture-writing tool.
namespace densetune::fixtures {

/// Random corpus of `n` passages of lowercase words. A `planted_fraction` of
/// passages are copies or substrings (with punctuation and case noise) of
/// earlier passages.
corpus::Corpus random_corpus(std::size_t n, std::uint64_t seed, double planted_fraction,
                             std::size_t min_words = 3, std::size_t max_words = 12, std::size_t vocabulary = 40);

/// Random unit vectors with ids "p0", "p1", ...
embeddings::EmbeddingStore random_store(std::size_t count, std::size_t dim, std::uint64_t seed,
                                        const std::string& prefix = "p");

/// Two-stage filter fixture: 25 queries pass, 15 fail the retrieval gate, 10
/// fail the teacher gate. The partition follows from the geometry alone.
struct FilterFixture {
  std::vector<querygen::GeneratedQuery> queries;
  embeddings::EmbeddingStore query_embs{1};
  embeddings::EmbeddingStore passage_embs{1};
  teacher::ScoreTable teacher;  // normalized
  std::vector<std::string> expect_kept;
  std::vector<std::string> expect_stage1;
  std::vector<std::string> expect_stage2;
};
FilterFixture filter_fixture(std::uint64_t seed);

/// One query whose positive has five near-duplicates at retrieval ranks 1-5
/// (teacher scores just under the positive's), followed by 60 candidates at
/// strictly decreasing similarity with teacher scores under 0.3.
struct DenoiseFixture {
  std::string query_id;
  std::string positive_id;
  embeddings::EmbeddingStore query_embs{1};
  embeddings::EmbeddingStore passage_embs{1};
  teacher::ScoreTable teacher;  // normalized
  std::vector<std::string> near_duplicates;
  /// Non-positive passages in retrieval order, near-duplicates included.
  std::vector<std::string> ranked_candidates;
};
DenoiseFixture denoise_fixture(std::uint64_t seed);

/// Retrieval task with planted structure. Passages fall into topic clusters
/// plus unclustered distractors. Every embedding has three blocks: topic (what
/// relevance depends on), style (passage-specific surface form), and nuisance
/// (noise). Queries sit near their topic centre; a training query also copies
/// its source passage's style, a held-out query does not. For a query the
/// source passage is grade 3 and the rest of its cluster grade 2: the planted
/// false negatives, which often outrank the source under the base embeddings.
struct TaskConfig {
  std::size_t passages = 2000;
  std::size_t topics = 96;
  std::size_t topic_size = 20;
  std::size_t queries = 400;
  std::size_t eval_queries = 100;
  std::size_t topic_dims = 12;
  std::size_t style_dims = 12;
  std::size_t nuisance_dims = 8;
  double topic_scale = 1.0;
  double style_scale = 0.3;
  double nuisance_scale = 1.3;
  /// Spread of passages around their topic centre.
  double member_noise = 0.5;
  double query_noise = 0.35;
  double teacher_noise_sd = 0.05;
  /// Retrieval depth covered by teacher scores for training queries.
  std::size_t teacher_depth = 60;
  /// Distractor passages whose text becomes a substring of a clustered passage.
  std::size_t planted_substrings = 0;
  std::uint64_t seed = 17;
};

struct Task {
  corpus::Corpus corpus;
  std::vector<querygen::GeneratedQuery> train_queries;
  std::vector<std::string> eval_query_ids;
  embeddings::EmbeddingStore query_embs{1};
  embeddings::EmbeddingStore passage_embs{1};
  /// Raw oracle-teacher scores for each training query against its base
  /// top-(`teacher_depth` + `planted_substrings`) passages and its source.
  teacher::ScoreTable raw_teacher;
  /// Raw oracle-teacher scores for each eval query against its base
  /// top-(100 + `planted_substrings`).
  teacher::ScoreTable eval_teacher;
  /// Graded judgments for the held-out queries.
  eval::Qrels eval_qrels;
  /// Graded judgments for every query (topic relevance).
  eval::Qrels all_qrels;
};

Task make_task(const TaskConfig& cfg);

/// Training settings sized for make_task's few hundred groups: more, smaller
/// steps than the large-corpus defaults.
trainer::TrainConfig task_train_config();

/// Mining requests (query, source passage) for every training query.
std::vector<negatives::MiningRequest> mining_requests(const Task& task);

}  // namespace densetune::fixtures
