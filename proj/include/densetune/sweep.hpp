#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "densetune/embeddings.hpp"
#include "densetune/eval.hpp"
#include "densetune/loss.hpp"
#include "densetune/negatives.hpp"
#include "densetune/trainer.hpp"

namespace densetune::negatives {

/// Held-out retrieval evaluation: queries in `query_ids` against all passages.
struct EvalBundle {
  const embeddings::EmbeddingStore& queries;
  const embeddings::EmbeddingStore& passages;
  std::vector<std::string> query_ids;
  const eval::Qrels& qrels;
  std::size_t depth = 100;
};

/// Retrieves with adapted embeddings and scores the run against the qrels.
eval::RunFile retrieve_with_adapter(const trainer::AdapterModel& model, const EvalBundle& bundle,
                                    const std::string& tag = "densetune");
eval::MetricsSummary evaluate_adapter(const trainer::AdapterModel& model, const EvalBundle& bundle);

/// Everything needed to mine and train once per threshold.
struct SweepSource {
  std::span<const MiningRequest> requests;
  const embeddings::EmbeddingStore& passages;
  const embeddings::EmbeddingStore& queries;
  const teacher::ScoreTable& teacher;
  MiningConfig mining;
  loss::LossConfig loss;
  trainer::TrainConfig train;
};

struct SweepRow {
  double threshold = 0.0;
  double map = 0.0;
  double ndcg10 = 0.0;
  double recall100 = 0.0;
  std::size_t groups = 0;
  std::size_t rejected = 0;
};

/// For each threshold in order: re-mine with that de-noising fraction, train
/// with the fixed seed, evaluate. Errors are re-raised prefixed with the threshold.
std::vector<SweepRow> threshold_sweep(const SweepSource& source, std::span<const double> thresholds,
                                      const EvalBundle& bundle);

/// "threshold,map,ndcg10,recall100" header then one row per threshold.
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace densetune::negatives
