#include "densetune/negatives.hpp"

#include <unordered_set>

#include "densetune/error.hpp"
#include "densetune/io.hpp"

namespace densetune::negatives {

void MiningConfig::validate() const {
  if (!(threshold_fraction > 0.0 && threshold_fraction <= 1.0)) {
    throw UsageError("threshold_fraction must lie in (0, 1]");
  }
  if (K == 0) throw UsageError("K must be positive");
  if (mining_depth < K + 1) throw UsageError("mining_depth must be at least K + 1");
}

MineResult mine_negatives(const std::string& query_id, const std::string& positive_id,
                          const embeddings::EmbeddingStore& passage_embs,
                          const embeddings::EmbeddingStore& query_embs, const teacher::ScoreTable& teacher,
                          const MiningConfig& cfg) {
  const double positive_score = teacher.at(query_id, positive_id);
  if (positive_score <= 0.0) return Rejection{query_id, kZeroPositiveScore};
  const double ceiling = cfg.threshold_fraction * positive_score;

  const embeddings::IdSet exclude{positive_id};
  const auto retrieved = embeddings::top_k(query_id, query_embs.at(query_id), passage_embs, cfg.mining_depth, &exclude);

  TrainingGroup group{query_id, positive_id, {}, {positive_score}};
  for (const auto& hit : retrieved.ranked) {
    const double s = teacher.at(query_id, hit.passage_id);
    if (s < ceiling) {
      group.negative_ids.push_back(hit.passage_id);
      group.teacher_scores.push_back(s);
      if (group.negative_ids.size() == cfg.K) return group;
    }
  }
  return Rejection{query_id, kInsufficientNegatives};
}

MiningOutcome mine_all(std::span<const MiningRequest> requests, const embeddings::EmbeddingStore& passage_embs,
                       const embeddings::EmbeddingStore& query_embs, const teacher::ScoreTable& teacher,
                       const MiningConfig& cfg, Exec exec) {
  cfg.validate();
  std::vector<MineResult> results(requests.size());
  for_each_index(requests.size(), exec, [&](std::size_t i) {
    results[i] = mine_negatives(requests[i].query_id, requests[i].positive_id, passage_embs, query_embs, teacher, cfg);
  });
  MiningOutcome outcome;
  for (auto& r : results) {
    if (auto* g = std::get_if<TrainingGroup>(&r)) {
      outcome.groups.push_back(std::move(*g));
    } else {
      outcome.rejected.push_back(std::get<Rejection>(std::move(r)));
    }
  }
  return outcome;
}

void check_group(const TrainingGroup& group, std::size_t K, std::optional<double> threshold_fraction) {
  const auto fail = [&](const std::string& why) {
    throw DataError("training group for query " + group.query_id + ": " + why);
  };
  if (group.negative_ids.size() != K) fail("expected " + std::to_string(K) + " negatives");
  if (group.teacher_scores.size() != K + 1) fail("expected " + std::to_string(K + 1) + " teacher scores");
  std::unordered_set<std::string> seen;
  for (const auto& n : group.negative_ids) {
    if (n == group.positive_id) fail("positive " + n + " listed as a negative");
    if (!seen.insert(n).second) fail("negative " + n + " repeated");
  }
  for (double s : group.teacher_scores) {
    if (!(s >= 0.0 && s <= 1.0)) fail("teacher score outside [0, 1]");
  }
  if (threshold_fraction) {
    const double ceiling = *threshold_fraction * group.teacher_scores[0];
    for (std::size_t k = 1; k <= K; ++k) {
      if (!(group.teacher_scores[k] < ceiling)) fail("negative " + group.negative_ids[k - 1] + " is above threshold");
    }
  }
}

std::vector<TrainingGroup> load_groups(const std::filesystem::path& path) {
  std::vector<TrainingGroup> groups;
  read_jsonl(path, [&](const json& obj, std::size_t line) {
    TrainingGroup g;
    g.query_id = require_string(obj, "query_id", line);
    g.positive_id = require_string(obj, "positive_id", line);
    try {
      g.negative_ids = obj.at("negative_ids").get<std::vector<std::string>>();
      g.teacher_scores = obj.at("teacher_scores").get<std::vector<double>>();
    } catch (const json::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": malformed training group");
    }
    check_group(g, g.negative_ids.size());
    groups.push_back(std::move(g));
  });
  return groups;
}

void write_groups(const std::filesystem::path& path, std::span<const TrainingGroup> groups) {
  auto out = open_output(path);
  for (const auto& g : groups) {
    out << dump_line(json{{"query_id", g.query_id},
                          {"positive_id", g.positive_id},
                          {"negative_ids", g.negative_ids},
                          {"teacher_scores", g.teacher_scores}})
        << '\n';
  }
}

}  // namespace densetune::negatives
