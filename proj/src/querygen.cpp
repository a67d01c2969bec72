#include "densetune/querygen.hpp"

#include <algorithm>
#include <array>
#include <sstream>
#include <unordered_set>

#include "densetune/error.hpp"

namespace densetune::querygen {
namespace {

constexpr std::array<std::pair<QueryType, std::string_view>, 7> kTypeNames = {{
    {QueryType::question, "question"},
    {QueryType::claim, "claim"},
    {QueryType::title, "title"},
    {QueryType::keywords, "keywords"},
    {QueryType::user_search, "user_search"},
    {QueryType::user_search_fewshot, "user_search_fewshot"},
    {QueryType::human, "human"},
}};

std::size_t word_count(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  std::string word;
  while (in >> word) ++n;
  return n;
}

enum class Outcome { kept, stage1, stage2 };

}  // namespace

std::string_view to_string(QueryType type) {
  for (const auto& [t, name] : kTypeNames) {
    if (t == type) return name;
  }
  return "question";
}

std::optional<QueryType> parse_query_type(std::string_view name) {
  for (const auto& [t, n] : kTypeNames) {
    if (n == name) return t;
  }
  return std::nullopt;
}

std::vector<std::string> validate_query(const GeneratedQuery& query) {
  std::vector<std::string> warnings;
  const auto words = word_count(query.text);
  if (words >= kMaxQueryWords) {
    warnings.push_back("query " + query.query_id + " has " + std::to_string(words) + " words (limit is under " +
                       std::to_string(kMaxQueryWords) + ")");
  }
  if (corpus::normalize_text(query.text).empty()) {
    warnings.push_back("query " + query.query_id + " is empty after normalization");
  }
  return warnings;
}

std::vector<std::string> structural_errors(std::span<const GeneratedQuery> queries, const corpus::Corpus& corpus) {
  std::vector<std::string> errors;
  std::unordered_set<std::string> seen;
  for (const auto& q : queries) {
    if (q.query_id.empty()) errors.push_back("query with empty id");
    if (!seen.insert(q.query_id).second) errors.push_back("duplicate query id " + q.query_id);
    if (q.text.empty()) errors.push_back("query " + q.query_id + " has empty text");
    if (!corpus.contains(q.source_passage_id)) {
      errors.push_back("query " + q.query_id + " references unknown passage " + q.source_passage_id);
    }
  }
  return errors;
}

FilterReport filter_queries(std::span<const GeneratedQuery> queries, const embeddings::EmbeddingStore& query_embs,
                            const embeddings::EmbeddingStore& passage_embs, const teacher::ScoreTable& teacher,
                            std::size_t depth, Exec exec) {
  std::vector<Outcome> outcomes(queries.size());
  for_each_index(queries.size(), exec, [&](std::size_t i) {
    const auto& q = queries[i];
    if (!passage_embs.contains(q.source_passage_id)) {
      throw DataError("missing embedding for source passage " + q.source_passage_id + " of query " + q.query_id);
    }
    const auto retrieved = embeddings::top_k(q.query_id, query_embs.at(q.query_id), passage_embs, depth);
    const bool in_pool = std::any_of(retrieved.ranked.begin(), retrieved.ranked.end(),
                                     [&](const embeddings::Hit& h) { return h.passage_id == q.source_passage_id; });
    if (!in_pool) {
      outcomes[i] = Outcome::stage1;
      return;
    }
    const embeddings::Hit* best = nullptr;
    double best_score = 0.0;
    for (const auto& hit : retrieved.ranked) {
      const double s = teacher.at(q.query_id, hit.passage_id);
      if (!best || s > best_score || (s == best_score && hit.passage_id < best->passage_id)) {
        best = &hit;
        best_score = s;
      }
    }
    outcomes[i] = best->passage_id == q.source_passage_id ? Outcome::kept : Outcome::stage2;
  });

  FilterReport report;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    switch (outcomes[i]) {
      case Outcome::kept: report.kept.push_back(queries[i].query_id); break;
      case Outcome::stage1: report.dropped_stage1.push_back(queries[i].query_id); break;
      case Outcome::stage2: report.dropped_stage2.push_back(queries[i].query_id); break;
    }
  }
  return report;
}

json report_to_json(const FilterReport& report) {
  const auto total = report.kept.size() + report.dropped_stage1.size() + report.dropped_stage2.size();
  return json{{"kept", report.kept},
              {"dropped_stage1", report.dropped_stage1},
              {"dropped_stage2", report.dropped_stage2},
              {"counts",
               {{"input", total},
                {"kept", report.kept.size()},
                {"dropped_stage1", report.dropped_stage1.size()},
                {"dropped_stage2", report.dropped_stage2.size()}}}};
}

FilterReport report_from_json(const json& obj) {
  try {
    return FilterReport{obj.at("kept").get<std::vector<std::string>>(),
                        obj.at("dropped_stage1").get<std::vector<std::string>>(),
                        obj.at("dropped_stage2").get<std::vector<std::string>>()};
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed filter report: ") + e.what());
  }
}

std::vector<GeneratedQuery> load_queries(const std::filesystem::path& path) {
  std::vector<GeneratedQuery> queries;
  read_jsonl(path, [&](const json& obj, std::size_t line) {
    GeneratedQuery q;
    q.query_id = require_string(obj, "query_id", line);
    q.text = require_string(obj, "text", line);
    q.source_passage_id = require_string(obj, "source_passage_id", line);
    const auto type_name = require_string(obj, "qtype", line);
    auto type = parse_query_type(type_name);
    if (!type) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": unknown qtype \"" + type_name +
                      "\" for query " + q.query_id);
    }
    q.qtype = *type;
    queries.push_back(std::move(q));
  });
  return queries;
}

void write_queries(const std::filesystem::path& path, std::span<const GeneratedQuery> queries) {
  auto out = open_output(path);
  for (const auto& q : queries) {
    out << dump_line(json{{"query_id", q.query_id},
                          {"text", q.text},
                          {"source_passage_id", q.source_passage_id},
                          {"qtype", std::string(to_string(q.qtype))}})
        << '\n';
  }
}

}  // namespace densetune::querygen
