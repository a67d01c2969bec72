#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "densetune/adapter.hpp"
#include "densetune/embeddings.hpp"
#include "densetune/exec.hpp"
#include "densetune/io.hpp"
#include "densetune/loss.hpp"
#include "densetune/negatives.hpp"

namespace densetune::trainer {

/// Batch size used for the large-batch runs the gradient cache exists for.
inline constexpr std::size_t kLargeBatchQueries = 4096;

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t queries_per_batch = 256;
  std::size_t max_epochs = 30;
  std::size_t patience = 2;
  double dev_fraction = 0.1;
  /// Queries per gradient-cache chunk.
  std::size_t chunk_size = 256;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled decay, applied to W only.
  double weight_decay = 0.01;
  /// Fixed-order reductions everywhere; off allows per-thread accumulation.
  bool deterministic = true;

  /// Raises UsageError on out-of-range values.
  void validate() const;
};

json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& obj);
json to_json(const loss::LossConfig& cfg);
loss::LossConfig loss_config_from_json(const json& obj);

struct Split {
  std::vector<negatives::TrainingGroup> train;
  std::vector<negatives::TrainingGroup> dev;
};

/// Seeded SplitMix64 shuffle, then the first floor(dev_fraction * n) groups go
/// to dev. Raises DataError with fewer than 10 groups or when a query id
/// appears in more than one group.
Split split_train_dev(std::span<const negatives::TrainingGroup> groups, double dev_fraction, std::uint64_t seed);

/// Base (unadapted) embeddings the groups refer to.
struct EmbeddingSources {
  const embeddings::EmbeddingStore& queries;
  const embeddings::EmbeddingStore& passages;
};

enum class GradientPath {
  /// Adapted embeddings for the whole batch first, loss gradients with respect
  /// to them cached, then parameter gradients accumulated chunk by chunk.
  gradient_cache,
  /// Materialized score matrix, score gradients back-propagated through the
  /// cosine, one pass over every embedding.
  monolithic,
};

struct BatchGradients {
  double loss = 0.0;
  std::vector<double> param_grad;
  double min_score = 0.0;
  double max_score = 0.0;
};

BatchGradients compute_batch_gradients(const AdapterModel& model, std::span<const negatives::TrainingGroup> batch,
                                       const EmbeddingSources& sources, const loss::LossConfig& loss_cfg,
                                       const TrainConfig& cfg, GradientPath path = GradientPath::gradient_cache);

/// Combined loss of `groups` in consecutive batches of queries_per_batch,
/// averaged with weights proportional to batch size. No parameter updates.
double evaluate_loss(const AdapterModel& model, std::span<const negatives::TrainingGroup> groups,
                     const EmbeddingSources& sources, const loss::LossConfig& loss_cfg, const TrainConfig& cfg);

/// Adaptive-moment optimizer with decoupled weight decay.
class AdamW {
 public:
  AdamW(const TrainConfig& cfg, std::size_t param_count, std::size_t decayed_count);
  void step(std::span<double> params, std::span<const double> grad);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::size_t decayed_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

struct EpochStats {
  std::size_t epoch = 0;
  /// Mean pre-step batch loss over the epoch; for epoch 0 the train-set loss at initialization.
  double train_loss = 0.0;
  double dev_loss = 0.0;
};

struct TrainReport {
  /// Epoch 0 is the untrained adapter.
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  std::string stopping_reason;
  std::string model_path;
};

json to_json(const TrainReport& report);

struct TrainResult {
  AdapterModel model;
  TrainReport report;
};

/// Trains a fresh identity adapter on the train side of split_train_dev with
/// the combined loss, one optimizer step per batch, and returns the
/// best-dev-loss checkpoint. Stops after `patience` epochs without a strict
/// dev-loss improvement, or at max_epochs. A non-finite loss raises
/// NumericError naming the epoch, batch, and score range.
TrainResult train(std::span<const negatives::TrainingGroup> groups, const EmbeddingSources& sources,
                  const loss::LossConfig& loss_cfg, const TrainConfig& cfg);

}  // namespace densetune::trainer
