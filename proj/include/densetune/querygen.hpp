#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "densetune/corpus.hpp"
#include "densetune/embeddings.hpp"
#include "densetune/exec.hpp"
#include "densetune/io.hpp"
#include "densetune/scores.hpp"

namespace densetune::querygen {

enum class QueryType { question, claim, title, keywords, user_search, user_search_fewshot, human };

std::string_view to_string(QueryType type);
std::optional<QueryType> parse_query_type(std::string_view name);

struct GeneratedQuery {
  std::string query_id;
  std::string text;
  std::string source_passage_id;
  QueryType qtype = QueryType::question;
};

/// Queries are generated under this many words; reaching it draws a warning.
inline constexpr std::size_t kMaxQueryWords = 20;
inline constexpr std::size_t kDefaultFilterDepth = 20;

/// Non-fatal findings: whitespace token count >= kMaxQueryWords, or empty
/// text after normalization.
std::vector<std::string> validate_query(const GeneratedQuery& query);

/// Structural problems against a corpus: unknown source passage, empty text,
/// duplicate query id. Empty when the batch is well-formed.
std::vector<std::string> structural_errors(std::span<const GeneratedQuery> queries,
                                           const corpus::Corpus& corpus);

/// Partition of the input ids, each list in input order.
struct FilterReport {
  std::vector<std::string> kept;
  std::vector<std::string> dropped_stage1;
  std::vector<std::string> dropped_stage2;
};

/// Stage 1 drops a query whose source passage is not in its top-`depth`
/// student retrieval. Stage 2 reorders those same `depth` passages by teacher
/// score (descending, ties by passage id) and drops the query unless its
/// source passage comes first. Missing embeddings or teacher scores raise
/// DataError naming the id.
FilterReport filter_queries(std::span<const GeneratedQuery> queries,
                            const embeddings::EmbeddingStore& query_embs,
                            const embeddings::EmbeddingStore& passage_embs,
                            const teacher::ScoreTable& teacher,
                            std::size_t depth = kDefaultFilterDepth, Exec exec = Exec::parallel);

/// {"kept": [...], "dropped_stage1": [...], "dropped_stage2": [...],
///  "counts": {"input", "kept", "dropped_stage1", "dropped_stage2"}}
json report_to_json(const FilterReport& report);
FilterReport report_from_json(const json& obj);

/// JSON-Lines {"query_id", "text", "source_passage_id", "qtype"}.
std::vector<GeneratedQuery> load_queries(const std::filesystem::path& path);
void write_queries(const std::filesystem::path& path, std::span<const GeneratedQuery> queries);

}  // namespace densetune::querygen
