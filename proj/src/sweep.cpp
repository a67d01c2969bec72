#include "densetune/sweep.hpp"

#include <cstdio>

#include <spdlog/spdlog.h>

#include "densetune/error.hpp"

namespace densetune::negatives {

eval::RunFile retrieve_with_adapter(const trainer::AdapterModel& model, const EvalBundle& bundle,
                                    const std::string& tag) {
  const auto passages = trainer::apply_adapter(model, bundle.passages);
  const std::unordered_set<std::string> wanted(bundle.query_ids.begin(), bundle.query_ids.end());
  const auto queries = trainer::apply_adapter(
      model, bundle.queries.filter([&](const std::string& id) { return wanted.contains(id); }));
  const auto results = embeddings::top_k_batch(queries, passages, bundle.depth, Exec::parallel, bundle.query_ids);
  return eval::run_from_retrieval(results, tag);
}

eval::MetricsSummary evaluate_adapter(const trainer::AdapterModel& model, const EvalBundle& bundle) {
  return eval::evaluate_run(retrieve_with_adapter(model, bundle), bundle.qrels);
}

std::vector<SweepRow> threshold_sweep(const SweepSource& source, std::span<const double> thresholds,
                                      const EvalBundle& bundle) {
  std::vector<SweepRow> rows;
  for (const double threshold : thresholds) {
    try {
      MiningConfig mining = source.mining;
      mining.threshold_fraction = threshold;
      const auto mined = mine_all(source.requests, source.passages, source.queries, source.teacher, mining);
      const auto trained = trainer::train(mined.groups, trainer::EmbeddingSources{source.queries, source.passages},
                                          source.loss, source.train);
      const auto metrics = evaluate_adapter(trained.model, bundle);
      rows.push_back(SweepRow{threshold, metrics.map.mean, metrics.ndcg10.mean, metrics.recall100.mean,
                              mined.groups.size(), mined.rejected.size()});
      spdlog::info("threshold {}: ndcg@10 {:.4f}, map {:.4f}, recall@100 {:.4f}", threshold, rows.back().ndcg10,
                   rows.back().map, rows.back().recall100);
    } catch (const Error& e) {
      throw Error(e.kind(), "threshold " + std::to_string(threshold) + ": " + e.what());
    }
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  auto out = open_output(path);
  out << "threshold,map,ndcg10,recall100\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%.4g,%.6f,%.6f,%.6f\n", r.threshold, r.map, r.ndcg10, r.recall100);
    out << line;
  }
}

}  // namespace densetune::negatives
