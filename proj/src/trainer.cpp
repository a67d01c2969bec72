#include "densetune/trainer.hpp"

#include <cmath>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "densetune/error.hpp"
#include "densetune/rng.hpp"

namespace densetune::trainer {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw UsageError("learning_rate must be non-negative");
  if (queries_per_batch == 0) throw UsageError("queries_per_batch must be positive");
  if (chunk_size == 0 || chunk_size > queries_per_batch) {
    throw UsageError("chunk_size must lie in [1, queries_per_batch]");
  }
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw UsageError("dev_fraction must lie in (0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0 && weight_decay >= 0.0)) {
    throw UsageError("invalid optimizer hyperparameters");
  }
}

json to_json(const TrainConfig& cfg) {
  return json{{"learning_rate", cfg.learning_rate}, {"queries_per_batch", cfg.queries_per_batch},
              {"max_epochs", cfg.max_epochs},       {"patience", cfg.patience},
              {"dev_fraction", cfg.dev_fraction},   {"chunk_size", cfg.chunk_size},
              {"seed", cfg.seed},                   {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},                 {"eps", cfg.eps},
              {"weight_decay", cfg.weight_decay},   {"deterministic", cfg.deterministic}};
}

TrainConfig train_config_from_json(const json& obj) {
  TrainConfig cfg;
  try {
    cfg.learning_rate = obj.value("learning_rate", cfg.learning_rate);
    cfg.queries_per_batch = obj.value("queries_per_batch", cfg.queries_per_batch);
    cfg.max_epochs = obj.value("max_epochs", cfg.max_epochs);
    cfg.patience = obj.value("patience", cfg.patience);
    cfg.dev_fraction = obj.value("dev_fraction", cfg.dev_fraction);
    cfg.chunk_size = obj.value("chunk_size", cfg.chunk_size);
    cfg.seed = obj.value("seed", cfg.seed);
    cfg.beta1 = obj.value("beta1", cfg.beta1);
    cfg.beta2 = obj.value("beta2", cfg.beta2);
    cfg.eps = obj.value("eps", cfg.eps);
    cfg.weight_decay = obj.value("weight_decay", cfg.weight_decay);
    cfg.deterministic = obj.value("deterministic", cfg.deterministic);
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid train config: ") + e.what());
  }
  return cfg;
}

json to_json(const loss::LossConfig& cfg) {
  return json{{"tau_student", cfg.tau_student},
              {"tau_teacher", cfg.tau_teacher},
              {"tau_contrastive", cfg.tau_contrastive},
              {"contrastive_weight", cfg.contrastive_weight},
              {"distill_weight", cfg.distill_weight},
              {"K", cfg.K}};
}

loss::LossConfig loss_config_from_json(const json& obj) {
  loss::LossConfig cfg;
  try {
    cfg.tau_student = obj.value("tau_student", cfg.tau_student);
    cfg.tau_teacher = obj.value("tau_teacher", cfg.tau_teacher);
    cfg.tau_contrastive = obj.value("tau_contrastive", cfg.tau_contrastive);
    cfg.contrastive_weight = obj.value("contrastive_weight", cfg.contrastive_weight);
    cfg.distill_weight = obj.value("distill_weight", cfg.distill_weight);
    cfg.K = obj.value("K", cfg.K);
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid loss config: ") + e.what());
  }
  return cfg;
}

Split split_train_dev(std::span<const negatives::TrainingGroup> groups, double dev_fraction, std::uint64_t seed) {
  if (groups.size() < 10) {
    throw DataError("split_train_dev: need at least 10 training groups, got " + std::to_string(groups.size()));
  }
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw UsageError("dev_fraction must lie in (0, 1)");
  std::unordered_set<std::string> seen;
  for (const auto& g : groups) {
    if (!seen.insert(g.query_id).second) throw DataError("query " + g.query_id + " has more than one training group");
  }
  std::vector<std::size_t> order(groups.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 rng(seed);
  rng.shuffle(order);
  const auto dev_count = static_cast<std::size_t>(std::floor(dev_fraction * static_cast<double>(groups.size()) + 1e-9));
  Split split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < dev_count ? split.dev : split.train).push_back(groups[order[i]]);
  }
  return split;
}

namespace {

struct BatchLayout {
  std::size_t n = 0;
  std::size_t K = 0;
  std::vector<std::span<const float>> query_inputs;    // n
  std::vector<std::span<const float>> passage_inputs;  // n (K + 1), slot order of BatchEmbeddings
  std::vector<double> teacher_pos;
  loss::Matrix teacher_neg;

  std::size_t positive_slot(std::size_t j) const { return j; }
  std::size_t negative_slot(std::size_t j, std::size_t k) const { return n + j * K + k; }
};

BatchLayout layout_batch(std::span<const negatives::TrainingGroup> batch, const EmbeddingSources& sources) {
  BatchLayout layout;
  layout.n = batch.size();
  layout.K = batch.front().K();
  layout.passage_inputs.resize(layout.n * (layout.K + 1));
  layout.teacher_neg = loss::Matrix(layout.n, layout.K);
  for (std::size_t j = 0; j < layout.n; ++j) {
    const auto& g = batch[j];
    if (g.K() != layout.K || g.teacher_scores.size() != layout.K + 1) {
      throw DataError("training group for query " + g.query_id + " has a different K from its batch");
    }
    layout.query_inputs.push_back(sources.queries.at(g.query_id));
    layout.passage_inputs[layout.positive_slot(j)] = sources.passages.at(g.positive_id);
    layout.teacher_pos.push_back(g.teacher_scores[0]);
    for (std::size_t k = 0; k < layout.K; ++k) {
      layout.passage_inputs[layout.negative_slot(j, k)] = sources.passages.at(g.negative_ids[k]);
      layout.teacher_neg(j, k) = g.teacher_scores[k + 1];
    }
  }
  return layout;
}

loss::BatchEmbeddings empty_embeddings(const BatchLayout& layout, std::size_t dim) {
  loss::BatchEmbeddings emb;
  emb.n = layout.n;
  emb.K = layout.K;
  emb.queries = loss::Matrix(layout.n, dim);
  emb.passages = loss::Matrix(layout.n * (layout.K + 1), dim);
  emb.teacher_pos = layout.teacher_pos;
  emb.teacher_neg = layout.teacher_neg;
  return emb;
}

/// Queries [begin, end) and every passage slot they own.
template <typename Fn>
void for_chunk_members(const BatchLayout& layout, std::size_t begin, std::size_t end, Fn&& fn) {
  for (std::size_t j = begin; j < end; ++j) {
    fn(/*is_query=*/true, j);
    fn(false, layout.positive_slot(j));
    for (std::size_t k = 0; k < layout.K; ++k) fn(false, layout.negative_slot(j, k));
  }
}

BatchGradients gradient_cache_step(const AdapterModel& model, const BatchLayout& layout,
                                   const loss::LossConfig& loss_cfg, const TrainConfig& cfg) {
  const std::size_t dim = model.dim();
  const std::size_t chunks = (layout.n + cfg.chunk_size - 1) / cfg.chunk_size;
  auto chunk_range = [&](std::size_t c) {
    return std::pair{c * cfg.chunk_size, std::min(layout.n, (c + 1) * cfg.chunk_size)};
  };

  // Pass 1: adapted embeddings for the whole batch, no parameter bookkeeping.
  auto emb = empty_embeddings(layout, dim);
  for_each_index(chunks, Exec::parallel, [&](std::size_t c) {
    const auto [begin, end] = chunk_range(c);
    for_chunk_members(layout, begin, end, [&](bool is_query, std::size_t row) {
      if (is_query) {
        model.forward(layout.query_inputs[row], emb.queries.row(row));
      } else {
        model.forward(layout.passage_inputs[row], emb.passages.row(row));
      }
    });
  });

  // Loss gradients with respect to every adapted embedding, cached.
  auto cached = loss::combined_loss_embeddings(emb, loss_cfg, Exec::parallel);

  // Pass 2: per chunk, inject the cached gradients into the adapter.
  BatchGradients out{cached.loss, std::vector<double>(model.params().size(), 0.0), cached.min_score, cached.max_score};
  auto accumulate_chunk = [&](std::size_t c, std::span<double> grad) {
    const auto [begin, end] = chunk_range(c);
    for_chunk_members(layout, begin, end, [&](bool is_query, std::size_t row) {
      if (is_query) {
        model.accumulate_grad(layout.query_inputs[row], cached.grads.queries.row(row), grad);
      } else {
        model.accumulate_grad(layout.passage_inputs[row], cached.grads.passages.row(row), grad);
      }
    });
  };
  if (cfg.deterministic) {
    std::vector<std::vector<double>> partial(chunks, std::vector<double>(out.param_grad.size(), 0.0));
    for_each_index(chunks, Exec::parallel, [&](std::size_t c) { accumulate_chunk(c, partial[c]); });
    for (const auto& p : partial) {
      for (std::size_t i = 0; i < p.size(); ++i) out.param_grad[i] += p[i];
    }
  } else {
    for_each_index(chunks, Exec::parallel, [&](std::size_t c) {
      std::vector<double> local(out.param_grad.size(), 0.0);
      accumulate_chunk(c, local);
#pragma omp critical(densetune_grad_reduce)
      for (std::size_t i = 0; i < local.size(); ++i) out.param_grad[i] += local[i];
    });
  }
  return out;
}

BatchGradients monolithic_step(const AdapterModel& model, const BatchLayout& layout, const loss::LossConfig& loss_cfg) {
  const std::size_t dim = model.dim();
  auto emb = empty_embeddings(layout, dim);
  for (std::size_t j = 0; j < layout.n; ++j) model.forward(layout.query_inputs[j], emb.queries.row(j));
  for (std::size_t s = 0; s < layout.passage_inputs.size(); ++s) {
    model.forward(layout.passage_inputs[s], emb.passages.row(s));
  }
  const auto scores = loss::score_batch(emb);
  const auto result = loss::combined_loss(scores, loss_cfg);
  const auto grads = loss::backprop_scores_to_embeddings(result.grads, emb.queries, emb.passages, layout.K);

  BatchGradients out{result.loss, std::vector<double>(model.params().size(), 0.0), 0.0, 0.0};
  const auto [lo, hi] = std::minmax_element(scores.student_cross.data().begin(), scores.student_cross.data().end());
  out.min_score = *lo;
  out.max_score = *hi;
  for (std::size_t j = 0; j < layout.n; ++j) {
    model.accumulate_grad(layout.query_inputs[j], grads.queries.row(j), out.param_grad);
  }
  for (std::size_t s = 0; s < layout.passage_inputs.size(); ++s) {
    model.accumulate_grad(layout.passage_inputs[s], grads.passages.row(s), out.param_grad);
  }
  return out;
}

}  // namespace

BatchGradients compute_batch_gradients(const AdapterModel& model, std::span<const negatives::TrainingGroup> batch,
                                       const EmbeddingSources& sources, const loss::LossConfig& loss_cfg,
                                       const TrainConfig& cfg, GradientPath path) {
  if (batch.empty()) throw DataError("compute_batch_gradients: empty batch");
  const auto layout = layout_batch(batch, sources);
  return path == GradientPath::gradient_cache ? gradient_cache_step(model, layout, loss_cfg, cfg)
                                              : monolithic_step(model, layout, loss_cfg);
}

double evaluate_loss(const AdapterModel& model, std::span<const negatives::TrainingGroup> groups,
                     const EmbeddingSources& sources, const loss::LossConfig& loss_cfg, const TrainConfig& cfg) {
  if (groups.empty()) throw DataError("evaluate_loss: no groups");
  double total = 0.0;
  for (std::size_t begin = 0; begin < groups.size(); begin += cfg.queries_per_batch) {
    const std::size_t end = std::min(groups.size(), begin + cfg.queries_per_batch);
    const auto layout = layout_batch(groups.subspan(begin, end - begin), sources);
    auto emb = empty_embeddings(layout, model.dim());
    for (std::size_t j = 0; j < layout.n; ++j) model.forward(layout.query_inputs[j], emb.queries.row(j));
    for (std::size_t s = 0; s < layout.passage_inputs.size(); ++s) {
      model.forward(layout.passage_inputs[s], emb.passages.row(s));
    }
    total += loss::combined_loss_embeddings(emb, loss_cfg, Exec::parallel).loss * static_cast<double>(layout.n);
  }
  return total / static_cast<double>(groups.size());
}

AdamW::AdamW(const TrainConfig& cfg, std::size_t param_count, std::size_t decayed_count)
    : lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.eps),
      weight_decay_(cfg.weight_decay),
      decayed_(decayed_count),
      m_(param_count, 0.0),
      v_(param_count, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double m_hat = m_[i] / bias1;
    const double v_hat = v_[i] / bias2;
    if (i < decayed_) params[i] -= lr_ * weight_decay_ * params[i];
    params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

json to_json(const TrainReport& report) {
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back(json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_loss", e.dev_loss}});
  }
  return json{{"epochs", epochs},
              {"best_epoch", report.best_epoch},
              {"stopping_reason", report.stopping_reason},
              {"model_path", report.model_path}};
}

TrainResult train(std::span<const negatives::TrainingGroup> groups, const EmbeddingSources& sources,
                  const loss::LossConfig& loss_cfg, const TrainConfig& cfg) {
  cfg.validate();
  loss_cfg.validate();
  if (sources.queries.dim() != sources.passages.dim()) {
    throw DataError("query and passage embeddings differ in dimension");
  }
  auto split = split_train_dev(groups, cfg.dev_fraction, cfg.seed);
  if (split.train.empty() || split.dev.empty()) throw DataError("train/dev split left an empty side");
  for (const auto& g : groups) negatives::check_group(g, groups.front().K());

  const std::size_t dim = sources.queries.dim();
  AdapterModel model(dim);
  AdamW optimizer(cfg, model.params().size(), dim * dim);
  SplitMix64 shuffle_rng(cfg.seed ^ 0x5eedULL);

  TrainReport report;
  const double initial_dev = evaluate_loss(model, split.dev, sources, loss_cfg, cfg);
  report.epochs.push_back(EpochStats{0, evaluate_loss(model, split.train, sources, loss_cfg, cfg), initial_dev});
  AdapterModel best = model;
  double best_dev = initial_dev;
  report.stopping_reason = "max_epochs";

  std::vector<negatives::TrainingGroup> order = split.train;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_id = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.queries_per_batch, ++batch_id) {
      const std::size_t end = std::min(order.size(), begin + cfg.queries_per_batch);
      const std::span<const negatives::TrainingGroup> batch(order.data() + begin, end - begin);
      BatchGradients grads;
      try {
        grads = compute_batch_gradients(model, batch, sources, loss_cfg, cfg);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_id) + ": " + e.what());
      }
      for (double g : grads.param_grad) {
        if (!std::isfinite(g)) {
          throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_id) +
                             ": non-finite gradient (scores in [" + std::to_string(grads.min_score) + ", " +
                             std::to_string(grads.max_score) + "])");
        }
      }
      optimizer.step(model.params(), grads.param_grad);
      epoch_loss += grads.loss * static_cast<double>(batch.size());
    }
    const double dev = evaluate_loss(model, split.dev, sources, loss_cfg, cfg);
    report.epochs.push_back(EpochStats{epoch, epoch_loss / static_cast<double>(order.size()), dev});
    spdlog::info("epoch {}: train loss {:.6f}, dev loss {:.6f}", epoch, report.epochs.back().train_loss, dev);
    if (dev < best_dev) {
      best_dev = dev;
      best = model;
      report.best_epoch = epoch;
    } else if (epoch - report.best_epoch >= cfg.patience) {
      report.stopping_reason = "early_stop";
      break;
    }
  }
  return TrainResult{std::move(best), std::move(report)};
}

}  // namespace densetune::trainer
