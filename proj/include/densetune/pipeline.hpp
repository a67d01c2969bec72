#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "densetune/io.hpp"
#include "densetune/loss.hpp"
#include "densetune/negatives.hpp"
#include "densetune/trainer.hpp"

namespace densetune::pipeline {

inline constexpr const char* kVersion = "1.0.0";

/// Input locations. Relative paths resolve against the config file's
/// directory; each may be overridden by an environment variable
/// DENSETUNE_<NAME> (e.g. DENSETUNE_WORK_DIR).
struct Paths {
  std::filesystem::path corpus;
  std::filesystem::path queries;
  std::filesystem::path passage_embeddings;
  std::filesystem::path query_embeddings;
  std::filesystem::path teacher_scores;
  std::filesystem::path qrels;
  /// Teacher scores over the baseline run, for rerank-eval only.
  std::filesystem::path eval_teacher_scores;
  std::filesystem::path work_dir;
};

struct PipelineConfig {
  Paths paths;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::string log_level = "info";
  std::size_t filter_depth = 20;
  std::size_t retrieval_depth = 100;
  std::size_t rerank_depth = 100;
  negatives::MiningConfig mining;
  loss::LossConfig loss;
  trainer::TrainConfig train;
  std::vector<double> sweep_thresholds{0.3, 0.6, 0.95};
  /// Sweep runs train on InfoNCE alone.
  bool sweep_contrastive_only = true;

  /// Range checks on every section; raises UsageError.
  void validate() const;
};

/// Parses the JSON config, applies environment overrides, resolves paths.
/// Unknown keys raise UsageError.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig config_from_json(const json& obj, const std::filesystem::path& base_dir);
json to_json(const PipelineConfig& cfg);

enum class Stage {
  dedup,
  filter_queries,
  normalize_scores,
  mine,
  train,
  apply,
  retrieve,
  evaluate,
  rerank_eval,
  sweep_threshold,
  pipeline,
};

std::optional<Stage> parse_stage(std::string_view name);
std::string_view to_string(Stage stage);

/// Files a stage writes under work_dir.
namespace files {
inline constexpr const char* kDedupCorpus = "corpus.dedup.jsonl";
inline constexpr const char* kDedupRemoved = "dedup_removed.jsonl";
inline constexpr const char* kFilteredQueries = "queries.filtered.jsonl";
inline constexpr const char* kFilterReport = "filter_report.json";
inline constexpr const char* kNormalizedScores = "teacher.normalized.jsonl";
inline constexpr const char* kGroups = "groups.jsonl";
inline constexpr const char* kRejected = "mining_rejected.jsonl";
inline constexpr const char* kCheckpoint = "adapter.ckpt";
inline constexpr const char* kTrainReport = "train_report.json";
inline constexpr const char* kAdaptedPassages = "passages.adapted.emb";
inline constexpr const char* kAdaptedQueries = "queries.adapted.emb";
inline constexpr const char* kRun = "run.trec";
inline constexpr const char* kBaseRun = "run.base.trec";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kRerankMetrics = "rerank_metrics.json";
inline constexpr const char* kSweep = "sweep.csv";
inline constexpr const char* kManifestDir = "manifests";
}  // namespace files

/// Runs one stage (or the whole chain for Stage::pipeline), reading the
/// previous stages' outputs from work_dir, and writes manifests/<stage>.json:
/// {"stage", "version", "seed", "config_sha256", "inputs": {path: sha256},
///  "outputs": {path: sha256}}. Missing inputs raise UsageError naming the path.
void run_stage(Stage stage, const PipelineConfig& cfg);

}  // namespace densetune::pipeline
